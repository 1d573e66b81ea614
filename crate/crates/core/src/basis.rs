//! Bases and penalties for both directions of a partial effect.
//!
//! In covariate direction an effect uses B-splines, linear terms, indicators
//! or a constant; in density direction it uses B-splines or indicators,
//! constrained to integrate to zero against the reference measure so that
//! every basis function is a clr image. Penalties are combined by Kronecker
//! products, and the covariate smoothing parameter can be calibrated to a
//! target number of degrees of freedom.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{MeasureKind, ReferenceMeasure};

/// B-spline basis on an extended, uniformly spaced knot sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    degree: usize,
}

impl BSplineBasis {
    /// `n_interior` equidistant interior knots on `[lo, hi]`, extended by
    /// `degree` knots on either side with the same spacing.
    pub fn uniform(lo: f64, hi: f64, n_interior: usize, degree: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidBasis(format!("degenerate range [{lo}, {hi}]")));
        }
        let h = (hi - lo) / (n_interior + 1) as f64;
        let n_knots = n_interior + 2 * degree + 2;
        let knots = (0..n_knots)
            .map(|k| lo + (k as f64 - degree as f64) * h)
            .collect();
        Self::new(knots, degree)
    }

    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * degree + 2 {
            return Err(Error::InvalidBasis(format!(
                "{} knots cannot carry a degree-{degree} basis",
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidBasis("knots must be strictly increasing".into()));
        }
        Ok(Self { knots, degree })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Interval on which the basis is a partition of unity.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.knots[self.degree],
            self.knots[self.knots.len() - self.degree - 1],
        )
    }

    pub fn eval(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        bspline_eval(&self.knots, self.degree, points)
    }
}

/// Evaluates every B-spline of the given degree on `knots` at `points`
/// (one row per point). Points must lie in the span where the basis sums to one.
pub fn bspline_eval(knots: &[f64], degree: usize, points: &[f64]) -> Result<DMatrix<f64>> {
    let n_knots = knots.len();
    if n_knots < 2 * degree + 2 {
        return Err(Error::InvalidBasis("too few knots".into()));
    }
    let dim = n_knots - degree - 1;
    let lo = knots[degree];
    let hi = knots[n_knots - degree - 1];
    let tol = 1e-12 * (hi - lo).abs().max(1.0);
    let mut out = DMatrix::zeros(points.len(), dim);
    let mut local = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for (row, &x0) in points.iter().enumerate() {
        if !(x0 >= lo - tol && x0 <= hi + tol) {
            return Err(Error::InvalidBasis(format!(
                "point {x0} outside spline domain [{lo}, {hi}]"
            )));
        }
        let x = x0.clamp(lo, hi);
        // knot span with knots[span] <= x < knots[span + 1]; the right end
        // belongs to the last non-empty span
        let mut span = degree;
        while span < dim - 1 && x >= knots[span + 1] {
            span += 1;
        }
        local[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = local[r] / (right[r + 1] + left[j - r]);
                local[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            local[j] = saved;
        }
        for (j, &v) in local.iter().enumerate() {
            out[(row, span - degree + j)] = v;
        }
    }
    Ok(out)
}

/// The `r`-th order difference operator, `(K - r) × K`.
pub fn difference_matrix(k: usize, order: usize) -> Result<DMatrix<f64>> {
    if order >= k {
        return Err(Error::InvalidBasis(format!(
            "difference order {order} needs more than {k} coefficients"
        )));
    }
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::zeros(rows, k);
        for i in 0..rows {
            for j in 0..k {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    Ok(d)
}

/// `D_rᵀ D_r`; order zero gives the ridge penalty `I`.
pub fn difference_penalty(k: usize, order: usize) -> Result<DMatrix<f64>> {
    if order == 0 {
        return Ok(DMatrix::identity(k, k));
    }
    let d = difference_matrix(k, order)?;
    Ok(d.transpose() * d)
}

/// Kronecker product `a ⊗ b`.
pub fn kronecker(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Orthonormal basis `Z` of the complement of a single linear constraint `c`,
/// taken from the Householder QR factorization `cᵀ = [Q : Z] [R; 0]`.
pub fn constraint_complement(c: &[f64]) -> Result<DMatrix<f64>> {
    let p = c.len();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if p < 2 || !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateConstraint(
            "constraint row is zero or has a single entry".into(),
        ));
    }
    let alpha = if c[0] >= 0.0 { -norm } else { norm };
    let mut v = DVector::from_column_slice(c);
    v[0] -= alpha;
    let vtv = v.dot(&v);
    let h = DMatrix::<f64>::identity(p, p) - (&v * v.transpose()) * (2.0 / vtv);
    Ok(h.columns(1, p - 1).into_owned())
}

/// Orthonormal basis of `{θ : C θ = 0}` for a block of constraints `C`,
/// from the eigenvectors of `CᵀC` with negligible eigenvalues.
pub fn constraint_nullspace(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = c.ncols();
    if c.nrows() == 1 {
        return constraint_complement(c.row(0).transpose().as_slice());
    }
    let ctc = c.transpose() * c;
    let eig = SymmetricEigen::new(ctc);
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Ok(DMatrix::identity(p, p));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] <= 1e-10 * max)
        .collect();
    if keep.is_empty() {
        return Err(Error::DegenerateConstraint(
            "constraints leave no free coefficients".into(),
        ));
    }
    let mut z = DMatrix::zeros(p, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // fix the sign so the largest entry is positive
        let (imax, _) = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (k, x)| if x.abs() > acc.1.abs() + 1e-12 { (k, *x) } else { acc });
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        z.set_column(col, &v);
    }
    Ok(z)
}

/// Transforms a raw density-direction basis (`n × (K+1)`, one column per raw
/// function evaluated on the support) to `K` columns with zero μ-integral.
/// Returns `(Z, raw · Z)`.
pub fn sum_to_zero_transform(
    raw: &DMatrix<f64>,
    measure: &ReferenceMeasure,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    measure.check_len(raw.nrows())?;
    let w = DVector::from_column_slice(measure.weights());
    let c: Vec<f64> = (0..raw.ncols()).map(|j| raw.column(j).dot(&w)).collect();
    let z = constraint_complement(&c)?;
    let constrained = raw * &z;
    Ok((z, constrained))
}

/// Density-direction basis families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityBasisSpec {
    /// B-splines over the interval (continuous part).
    Bspline {
        degree: usize,
        n_interior: usize,
        penalty_order: usize,
    },
    /// One indicator per atom (discrete part).
    Indicator { penalty_order: usize },
}

impl DensityBasisSpec {
    pub const fn cubic_default() -> Self {
        Self::Bspline {
            degree: 3,
            n_interior: 8,
            penalty_order: 2,
        }
    }

    pub const fn indicator_default() -> Self {
        Self::Indicator { penalty_order: 1 }
    }

    /// The default family for a measure without atoms or without a grid.
    pub fn default_for(measure: &ReferenceMeasure) -> Self {
        match measure.kind() {
            MeasureKind::Discrete => Self::indicator_default(),
            _ => Self::cubic_default(),
        }
    }
}

/// Constrained density-direction basis: columns are clr functions on the support.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityBasis {
    /// `n × (K+1)` raw evaluation.
    pub raw: DMatrix<f64>,
    /// `(K+1) × K` constraint transform.
    pub transform: DMatrix<f64>,
    /// `n × K`, zero μ-integral columns.
    pub basis: DMatrix<f64>,
    /// `K × K` transformed penalty `Zᵀ P̄ Z`.
    pub penalty: DMatrix<f64>,
}

impl DensityBasis {
    pub fn build(measure: &ReferenceMeasure, spec: &DensityBasisSpec) -> Result<Self> {
        let (raw, raw_penalty) = match (*spec, measure.kind()) {
            (DensityBasisSpec::Indicator { penalty_order }, MeasureKind::Discrete) => {
                let n = measure.len();
                (DMatrix::identity(n, n), difference_penalty(n, penalty_order)?)
            }
            (DensityBasisSpec::Indicator { .. }, _) => {
                return Err(Error::InvalidBasis(
                    "indicator density basis requires a discrete measure".into(),
                ))
            }
            (
                DensityBasisSpec::Bspline {
                    degree,
                    n_interior,
                    penalty_order,
                },
                kind,
            ) => {
                let (a, b) = measure
                    .interval()
                    .ok_or(Error::WrongMeasureKind("continuous or mixed"))?;
                let spline = BSplineBasis::uniform(a, b, n_interior, degree)?;
                let grid = spline.eval(measure.grid_nodes())?;
                let ks = spline.dim();
                let pen = difference_penalty(ks, penalty_order)?;
                if kind == MeasureKind::Continuous {
                    (grid, pen)
                } else {
                    // atoms get their own indicators, splines vanish there
                    let d = measure.n_atoms();
                    let n = measure.len();
                    let mut raw = DMatrix::zeros(n, d + ks);
                    for i in 0..d {
                        raw[(i, i)] = 1.0;
                    }
                    raw.view_mut((d, d), (n - d, ks)).copy_from(&grid);
                    let mut pen_full = DMatrix::zeros(d + ks, d + ks);
                    pen_full.view_mut((d, d), (ks, ks)).copy_from(&pen);
                    (raw, pen_full)
                }
            }
        };
        let (transform, basis) = sum_to_zero_transform(&raw, measure)?;
        let penalty = transform.transpose() * raw_penalty * &transform;
        Ok(Self {
            raw,
            transform,
            basis,
            penalty,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// One partial effect's covariate and density bases with its Kronecker penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectDesign {
    pub name: String,
    /// `N × K_j` covariate-direction design (after identifiability constraints).
    pub covariate: DMatrix<f64>,
    /// `n × K_Y` constrained density-direction basis.
    pub density: DMatrix<f64>,
    pub covariate_penalty: DMatrix<f64>,
    pub density_penalty: DMatrix<f64>,
    pub lambda_covariate: f64,
    pub lambda_density: f64,
    pub isotropic: bool,
}

impl EffectDesign {
    pub fn n_covariate(&self) -> usize {
        self.covariate.ncols()
    }

    pub fn n_density(&self) -> usize {
        self.density.ncols()
    }

    pub fn n_coefficients(&self) -> usize {
        self.n_covariate() * self.n_density()
    }

    /// `P_{j,Y}` for coefficients ordered `θ_{n,m}` at `n * K_Y + m`.
    pub fn penalty(&self) -> DMatrix<f64> {
        kronecker_penalty(
            &self.covariate_penalty,
            &self.density_penalty,
            self.lambda_covariate,
            self.lambda_density,
            self.isotropic,
        )
    }

    /// clr surfaces `X Θ Bᵀ` (one row per observation) for a coefficient
    /// matrix `Θ` of shape `K_j × K_Y`.
    pub fn evaluate(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        &self.covariate * theta * self.density.transpose()
    }

    /// Explicit row design `X ⊗ B`: row `i * n + t`, column `k * K_Y + m`.
    pub fn full_design(&self) -> DMatrix<f64> {
        kronecker(&self.covariate, &self.density)
    }
}

/// `λ_j (P_j ⊗ I) + λ_Y (I ⊗ P_Y)`, or `λ_j ((P_j ⊗ I) + (I ⊗ P_Y))` when isotropic.
pub fn kronecker_penalty(
    pj: &DMatrix<f64>,
    py: &DMatrix<f64>,
    lambda_j: f64,
    lambda_y: f64,
    isotropic: bool,
) -> DMatrix<f64> {
    let kj = pj.nrows();
    let ky = py.nrows();
    let left = kronecker(pj, &DMatrix::identity(ky, ky));
    let right = kronecker(&DMatrix::identity(kj, kj), py);
    if isotropic {
        (left + right) * lambda_j
    } else {
        left * lambda_j + right * lambda_y
    }
}

/// Builds an [`EffectDesign`] from prepared covariate and density parts.
#[allow(clippy::too_many_arguments)]
pub fn assemble_effect(
    name: impl Into<String>,
    covariate: DMatrix<f64>,
    covariate_penalty: DMatrix<f64>,
    density: &DensityBasis,
    anisotropic: bool,
    lambda_j: f64,
    lambda_y: f64,
) -> Result<EffectDesign> {
    if covariate_penalty.nrows() != covariate.ncols() || !covariate_penalty.is_square() {
        return Err(Error::InvalidBasis(
            "covariate penalty does not match design".into(),
        ));
    }
    if !(lambda_j >= 0.0 && lambda_y >= 0.0) {
        return Err(Error::InvalidBasis("smoothing parameters must be >= 0".into()));
    }
    Ok(EffectDesign {
        name: name.into(),
        covariate,
        density: density.basis.clone(),
        covariate_penalty,
        density_penalty: density.penalty.clone(),
        lambda_covariate: lambda_j,
        lambda_density: lambda_y,
        isotropic: !anisotropic,
    })
}

/// Effective degrees of freedom `tr((BᵀB + λP)⁻¹ BᵀB)` of a penalized fit.
pub fn degrees_of_freedom(gram: &DMatrix<f64>, penalty: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let a = gram + penalty * lambda;
    let chol = Cholesky::new(a).ok_or_else(|| Error::Singular("penalized Gram matrix".into()))?;
    Ok(chol.solve(gram).trace())
}

const LOG10_LAMBDA_MIN: f64 = -8.0;
const LOG10_LAMBDA_MAX: f64 = 12.0;
const DF_TOL: f64 = 1e-4;

/// Smoothing parameter `λ` with `df(λ) = target`, by bisection on `log10 λ`
/// over `[-8, 12]`.
pub fn calibrate_df(design: &DMatrix<f64>, penalty: &DMatrix<f64>, target: f64) -> Result<f64> {
    let gram = design.transpose() * design;
    // a tiny ridge keeps the λ → 0 end solvable for rank-deficient designs
    let jitter = 1e-10 * gram.diagonal().max().max(1.0);
    let gram_j = &gram + DMatrix::<f64>::identity(gram.nrows(), gram.ncols()) * jitter;
    let df = |log_lambda: f64| degrees_of_freedom(&gram_j, penalty, 10f64.powf(log_lambda));
    let df_max = df(LOG10_LAMBDA_MIN)?;
    let df_min = df(LOG10_LAMBDA_MAX)?;
    if !(target.is_finite() && target >= df_min - DF_TOL && target <= df_max + DF_TOL) {
        return Err(Error::DfOutOfRange {
            target,
            min: df_min,
            max: df_max,
        });
    }
    if (target - df_max).abs() <= DF_TOL {
        return Ok(10f64.powf(LOG10_LAMBDA_MIN));
    }
    if (target - df_min).abs() <= DF_TOL {
        return Ok(10f64.powf(LOG10_LAMBDA_MAX));
    }
    let (mut lo, mut hi) = (LOG10_LAMBDA_MIN, LOG10_LAMBDA_MAX);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..100 {
        mid = 0.5 * (lo + hi);
        let value = df(mid)?;
        if (value - target).abs() <= DF_TOL * 1e-2 {
            break;
        }
        if value > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(mid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Atom;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook Cox–de Boor recursion.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if knots[i] <= x && x < knots[i + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn degree_zero_is_indicator() {
        let b = BSplineBasis::uniform(0.0, 1.0, 3, 0).unwrap();
        let m = b.eval(&[0.1, 0.3, 0.6, 0.9, 1.0]).unwrap();
        let expected = [0, 1, 2, 3, 3];
        for (row, &col) in expected.iter().enumerate() {
            for j in 0..b.dim() {
                assert_eq!(m[(row, j)], if j == col { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let b = BSplineBasis::uniform(-2.0, 3.0, 8, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..=3.0)).collect();
        let m = b.eval(&pts).unwrap();
        for r in 0..pts.len() {
            assert_abs_diff_eq!(m.row(r).sum(), 1.0, epsilon = 1e-12);
        }
        assert!(b.eval(&[3.5]).is_err());
    }

    #[test]
    fn cubic_matches_recursive_oracle() {
        let b = BSplineBasis::uniform(0.0, 1.0, 5, 3).unwrap();
        let knots = b.knots().to_vec();
        let pts: Vec<f64> = (0..=6).map(|k| k as f64 / 6.0).chain([0.05, 0.42, 0.77]).collect();
        let m = b.eval(&pts[..pts.len() - 1]).unwrap();
        for (r, &x) in pts[..pts.len() - 1].iter().enumerate() {
            if x >= 1.0 {
                continue; // the half-open recursion is zero at the right end
            }
            for j in 0..b.dim() {
                assert_abs_diff_eq!(m[(r, j)], cox_de_boor(&knots, j, 3, x), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn knots_must_increase() {
        assert!(BSplineBasis::new(vec![0.0, 1.0, 1.0, 2.0, 3.0, 4.0], 1).is_err());
    }

    #[test]
    fn difference_penalty_examples() {
        let p = difference_penalty(3, 1).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1., -1., 0., -1., 2., -1., 0., -1., 1.]);
        assert_eq!(p, expected);
        let p2 = difference_penalty(6, 2).unwrap();
        let ones = DVector::from_element(6, 1.0);
        let ramp = DVector::from_fn(6, |i, _| i as f64);
        assert!((&p * DVector::from_element(3, 1.0)).norm() < 1e-14);
        assert!((&p2 * ones).norm() < 1e-12);
        assert!((&p2 * ramp).norm() < 1e-12);
        let rank = SymmetricEigen::new(p2)
            .eigenvalues
            .iter()
            .filter(|v| v.abs() > 1e-9)
            .count();
        assert_eq!(rank, 4);
        assert!(difference_penalty(2, 2).is_err());
    }

    #[test]
    fn householder_complement_annihilates_constraint() {
        let c = [0.3, -1.2, 2.0, 0.7];
        let z = constraint_complement(&c).unwrap();
        let cz = DMatrix::from_row_slice(1, 4, &c) * &z;
        assert!(cz.amax() < 1e-12);
        let ztz = z.transpose() * &z;
        assert!((ztz - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        assert!(constraint_complement(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn sum_to_zero_on_every_measure_kind() {
        let measures = vec![
            ReferenceMeasure::discrete(&[(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)]).unwrap(),
            ReferenceMeasure::continuous(0.0, 1.0, 60).unwrap(),
            ReferenceMeasure::mixed(0.0, 1.0, &[Atom::new(0.0, 1.0), Atom::new(1.0, 1.0)], 60)
                .unwrap(),
        ];
        for m in measures {
            let basis = DensityBasis::build(&m, &DensityBasisSpec::default_for(&m)).unwrap();
            for j in 0..basis.dim() {
                let col: Vec<f64> = basis.basis.column(j).iter().copied().collect();
                assert_abs_diff_eq!(m.integrate(&col).unwrap(), 0.0, epsilon = 1e-10);
            }
            assert!((&basis.raw * &basis.transform - &basis.basis).amax() < 1e-14);
            let eig = SymmetricEigen::new(basis.penalty.clone());
            assert!(eig.eigenvalues.min() > -1e-10);
        }
    }

    #[test]
    fn constant_plus_centered_column() {
        let m = ReferenceMeasure::discrete(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]).unwrap();
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 1.0, 0.0, 1.0, 1.0]);
        let (_, constrained) = sum_to_zero_transform(&raw, &m).unwrap();
        let col = constrained.column(0);
        // spans (-1, 0, 1)
        assert_abs_diff_eq!(col[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(col[0], -col[2], epsilon = 1e-14);
        assert!(col[0].abs() > 0.1);
    }

    #[test]
    fn transformed_penalty_stays_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
        let pbar = &a * a.transpose();
        let c: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..1.0)).collect();
        let z = constraint_complement(&c).unwrap();
        let pt = z.transpose() * pbar * &z;
        assert!((&pt - pt.transpose()).amax() < 1e-14);
        assert!(SymmetricEigen::new(pt).eigenvalues.min() > -1e-12);
    }

    #[test]
    fn kronecker_penalty_examples() {
        let pj = DMatrix::from_element(1, 1, 0.0);
        let py = difference_penalty(3, 1).unwrap();
        assert_eq!(kronecker_penalty(&pj, &py, 5.0, 2.0, false), &py * 2.0);
        let pj = difference_penalty(3, 2).unwrap();
        let p0 = kronecker_penalty(&pj, &py, 4.0, 0.0, false);
        assert_eq!(p0, kronecker(&pj, &DMatrix::identity(3, 3)) * 4.0);
        assert_eq!(
            kronecker_penalty(&pj, &py, 1.0, 1.0, false),
            kronecker_penalty(&pj, &py, 1.0, 123.0, true)
        );
    }

    #[test]
    fn effect_surface_matches_naive_double_sum() {
        let m = ReferenceMeasure::continuous(0.0, 1.0, 20).unwrap();
        let db = DensityBasis::build(&m, &DensityBasisSpec::cubic_default()).unwrap();
        let xs: Vec<f64> = (0..7).map(|i| i as f64 / 6.0).collect();
        let spline = BSplineBasis::uniform(0.0, 1.0, 3, 3).unwrap();
        let x = spline.eval(&xs).unwrap();
        let px = difference_penalty(spline.dim(), 2).unwrap();
        let design = assemble_effect("g", x, px, &db, true, 1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = DMatrix::from_fn(design.n_covariate(), design.n_density(), |_, _| {
            rng.random_range(-1.0..1.0)
        });
        let surface = design.evaluate(&theta);
        let full = design.full_design();
        let theta_vec = DVector::from_iterator(
            design.n_coefficients(),
            (0..design.n_covariate()).flat_map(|k| theta.row(k).iter().copied().collect::<Vec<_>>()),
        );
        let stacked = full * theta_vec;
        for i in 0..xs.len() {
            for t in 0..m.len() {
                let mut naive = 0.0;
                for k in 0..design.n_covariate() {
                    for mm in 0..design.n_density() {
                        naive += design.covariate[(i, k)] * design.density[(t, mm)] * theta[(k, mm)];
                    }
                }
                assert_abs_diff_eq!(surface[(i, t)], naive, epsilon = 1e-10);
                assert_abs_diff_eq!(stacked[i * m.len() + t], naive, epsilon = 1e-10);
            }
        }
    }

    /// df via simultaneous diagonalization: Σ 1 / (1 + λ d_i).
    fn df_eigen(b: &DMatrix<f64>, p: &DMatrix<f64>, lambda: f64) -> f64 {
        let gram = b.transpose() * b;
        let l = Cholesky::new(gram).unwrap().l();
        let linv = l.clone().try_inverse().unwrap();
        let m = &linv * p * linv.transpose();
        SymmetricEigen::new(m)
            .eigenvalues
            .iter()
            .map(|d| 1.0 / (1.0 + lambda * d))
            .sum()
    }

    #[test]
    fn df_limits_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = DMatrix::from_fn(30, 6, |_, _| rng.random_range(-1.0..1.0));
        let ridge = DMatrix::<f64>::identity(6, 6);
        let gram = b.transpose() * &b;
        assert_abs_diff_eq!(degrees_of_freedom(&gram, &ridge, 0.0).unwrap(), 6.0, epsilon = 1e-10);
        assert!(degrees_of_freedom(&gram, &ridge, 1e12).unwrap() < 1e-8);

        let p = difference_penalty(6, 2).unwrap();
        let mut prev = f64::INFINITY;
        for k in -4..8 {
            let lambda = 10f64.powi(k);
            let d = degrees_of_freedom(&gram, &p, lambda).unwrap();
            approx::assert_relative_eq!(d, df_eigen(&b, &p, lambda), max_relative = 1e-8);
            assert!(d < prev);
            prev = d;
        }
    }

    #[test]
    fn calibration_hits_target() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let spline = BSplineBasis::uniform(0.0, 1.0, 8, 3).unwrap();
        let b = spline.eval(&xs).unwrap();
        let p = difference_penalty(spline.dim(), 2).unwrap();
        let lambda = calibrate_df(&b, &p, 4.0).unwrap();
        let gram = b.transpose() * &b;
        assert_abs_diff_eq!(degrees_of_freedom(&gram, &p, lambda).unwrap(), 4.0, epsilon = 1e-4);
        assert!(matches!(calibrate_df(&b, &p, 1.5), Err(Error::DfOutOfRange { .. })));
        assert!(matches!(calibrate_df(&b, &p, 20.0), Err(Error::DfOutOfRange { .. })));
    }
}
