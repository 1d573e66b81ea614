//! Covariate-direction designs: factor bases, row-wise tensor products,
//! centering and orthogonalization, penalties and df calibration.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::data::{Column, DataTable};
use super::spec::{ModelSpec, TermKind, TermSpec};
use crate::basis::{calibrate_df, difference_penalty, BSplineBasis};
use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-10;

/// One marginal basis of a term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Factor {
    Categorical { covariate: String, levels: Vec<String> },
    Linear { covariate: String },
    Spline {
        covariate: String,
        basis: BSplineBasis,
        penalty_order: usize,
    },
}

impl Factor {
    pub fn covariate(&self) -> &str {
        match self {
            Factor::Categorical { covariate, .. }
            | Factor::Linear { covariate }
            | Factor::Spline { covariate, .. } => covariate,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Factor::Categorical { levels, .. } => levels.len(),
            Factor::Linear { .. } => 1,
            Factor::Spline { basis, .. } => basis.dim(),
        }
    }

    pub fn raw(&self, data: &DataTable) -> Result<DMatrix<f64>> {
        match self {
            Factor::Categorical { covariate, levels } => {
                let col = data.column(covariate)?;
                let mut x = DMatrix::zeros(data.n_rows(), levels.len());
                for i in 0..data.n_rows() {
                    let label = col.label(i);
                    let k = levels.iter().position(|l| *l == label).ok_or_else(|| {
                        Error::Data(format!("unknown level `{label}` of `{covariate}`"))
                    })?;
                    x[(i, k)] = 1.0;
                }
                Ok(x)
            }
            Factor::Linear { covariate } => {
                let v = data.numeric(covariate)?;
                Ok(DMatrix::from_column_slice(v.len(), 1, v))
            }
            Factor::Spline { covariate, basis, .. } => basis.eval(data.numeric(covariate)?),
        }
    }

    /// Penalty of the factor on its own; linear factors are unpenalized.
    pub fn penalty(&self) -> Result<DMatrix<f64>> {
        match self {
            Factor::Categorical { levels, .. } => Ok(DMatrix::identity(levels.len(), levels.len())),
            Factor::Linear { .. } => Ok(DMatrix::zeros(1, 1)),
            Factor::Spline {
                basis,
                penalty_order,
                ..
            } => difference_penalty(basis.dim(), *penalty_order),
        }
    }
}

/// Row-wise Kronecker product: row `i` is `a_i ⊗ b_i`.
pub fn row_tensor(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ka, kb) = (a.ncols(), b.ncols());
    DMatrix::from_fn(a.nrows(), ka * kb, |i, c| a[(i, c / kb)] * b[(i, c % kb)])
}

/// A term's covariate-direction transformation, fixed at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermFit {
    pub name: String,
    pub kind: TermKind,
    pub covariates: Vec<String>,
    pub factors: Vec<Factor>,
    /// Terms whose column spaces are projected out.
    pub parents: Vec<usize>,
    /// Whether the constant is projected out as well.
    pub centered: bool,
    /// Coefficients of the projection onto `[1 | parent designs]`.
    #[serde(with = "crate::matrix_serde")]
    pub projection: DMatrix<f64>,
    /// Reparameterization dropping directions annihilated by centering.
    #[serde(with = "crate::matrix_serde")]
    pub transform: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub penalty: DMatrix<f64>,
    pub lambda: f64,
    pub df: f64,
}

impl TermFit {
    pub fn is_intercept(&self) -> bool {
        self.kind == TermKind::Intercept
    }

    pub fn covariate_set(&self) -> BTreeSet<&str> {
        self.covariates.iter().map(String::as_str).collect()
    }

    fn raw(&self, data: &DataTable) -> Result<DMatrix<f64>> {
        let mut x = DMatrix::from_element(data.n_rows(), 1, 1.0);
        for f in &self.factors {
            x = row_tensor(&x, &f.raw(data)?);
        }
        Ok(x)
    }

    fn anchors(&self, data: &DataTable, done: &[Option<DMatrix<f64>>]) -> Option<DMatrix<f64>> {
        let n = data.n_rows();
        let mut blocks: Vec<&DMatrix<f64>> = Vec::new();
        let ones = DMatrix::from_element(n, 1, 1.0);
        if self.centered {
            blocks.push(&ones);
        }
        for &p in &self.parents {
            blocks.push(done[p].as_ref().expect("parents come first"));
        }
        if blocks.is_empty() {
            return None;
        }
        let width: usize = blocks.iter().map(|b| b.ncols()).sum();
        let mut a = DMatrix::zeros(n, width);
        let mut c = 0;
        for b in blocks {
            a.view_mut((0, c), (n, b.ncols())).copy_from(b);
            c += b.ncols();
        }
        Some(a)
    }

    fn apply(&self, raw: DMatrix<f64>, anchors: Option<DMatrix<f64>>) -> DMatrix<f64> {
        let centered = match anchors {
            Some(a) => raw - a * &self.projection,
            None => raw,
        };
        centered * &self.transform
    }
}

/// Orders terms so that every term follows all terms on proper subsets of its covariates.
fn build_order(sets: &[BTreeSet<&str>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by_key(|&i| sets[i].len());
    order
}

/// Evaluates the fitted covariate designs on (possibly new) data.
pub fn evaluate_terms(terms: &[TermFit], data: &DataTable) -> Result<Vec<DMatrix<f64>>> {
    let sets: Vec<BTreeSet<&str>> = terms.iter().map(TermFit::covariate_set).collect();
    let mut done: Vec<Option<DMatrix<f64>>> = vec![None; terms.len()];
    for i in build_order(&sets) {
        let t = &terms[i];
        let raw = t.raw(data)?;
        let anchors = t.anchors(data, &done);
        done[i] = Some(t.apply(raw, anchors));
    }
    Ok(done.into_iter().map(|d| d.expect("all evaluated")).collect())
}

fn factors_for(term: &TermSpec, data: &DataTable) -> Result<Vec<Factor>> {
    let categorical = |name: &str| -> Result<Factor> {
        let levels = data.column(name)?.levels();
        if levels.len() < 2 {
            return Err(Error::Data(format!("group `{name}` has a single level")));
        }
        Ok(Factor::Categorical {
            covariate: name.to_string(),
            levels,
        })
    };
    let numeric_range = |name: &str| -> Result<(f64, f64)> {
        let v = data.numeric(name)?;
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::Data(format!("covariate `{name}` is constant")));
        }
        Ok((lo, hi))
    };
    let linear = |name: &str| -> Result<Factor> {
        numeric_range(name)?;
        Ok(Factor::Linear {
            covariate: name.to_string(),
        })
    };
    let spline = |name: &str| -> Result<Factor> {
        let (lo, hi) = numeric_range(name)?;
        Ok(Factor::Spline {
            covariate: name.to_string(),
            basis: BSplineBasis::uniform(lo, hi, term.knots.unwrap_or(8), term.degree.unwrap_or(3))?,
            penalty_order: term.penalty_order.unwrap_or(2),
        })
    };
    let c = &term.covariates;
    Ok(match term.kind {
        TermKind::Intercept => Vec::new(),
        TermKind::Linear => vec![linear(&c[0])?],
        TermKind::Flexible => vec![spline(&c[0])?],
        TermKind::GroupIntercept => vec![categorical(&c[0])?],
        TermKind::GroupLinear => vec![categorical(&c[0])?, linear(&c[1])?],
        TermKind::GroupFlexible => vec![categorical(&c[0])?, spline(&c[1])?],
        TermKind::VaryingCoefficient => vec![linear(&c[0])?, spline(&c[1])?],
        TermKind::Interaction => c
            .iter()
            .map(|name| match data.column(name)? {
                Column::Text(_) => categorical(name),
                Column::Numeric(_) => spline(name),
            })
            .collect::<Result<_>>()?,
    })
}

/// Kronecker sum of the factor penalties; a ridge when that vanishes.
fn term_penalty(factors: &[Factor]) -> Result<DMatrix<f64>> {
    let dims: Vec<usize> = factors.iter().map(Factor::dim).collect();
    let total: usize = dims.iter().product();
    let mut p = DMatrix::zeros(total, total);
    for (k, f) in factors.iter().enumerate() {
        let before: usize = dims[..k].iter().product();
        let after: usize = dims[k + 1..].iter().product();
        let block = DMatrix::<f64>::identity(before, before)
            .kronecker(&f.penalty()?)
            .kronecker(&DMatrix::<f64>::identity(after, after));
        p += block;
    }
    if p.amax() == 0.0 {
        p = DMatrix::identity(total, total);
    }
    Ok(p)
}

fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let inv = svd.singular_values.map(|s| if s > tol { 1.0 / s } else { 0.0 });
    vt.transpose() * DMatrix::from_diagonal(&inv) * u.transpose()
}

/// Basis of the directions that survive centering, or `None` if all do.
fn surviving_directions(xc: &DMatrix<f64>, name: &str) -> Result<Option<DMatrix<f64>>> {
    let eig = SymmetricEigen::new(xc.transpose() * xc);
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(Error::Data(format!(
            "term `{name}` vanishes after centering"
        )));
    }
    let mut keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > RANK_TOL * max)
        .collect();
    if keep.len() == eig.eigenvalues.len() {
        return Ok(None);
    }
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut z = DMatrix::zeros(xc.ncols(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v.neg_mut();
        }
        z.set_column(c, &v);
    }
    Ok(Some(z))
}

/// Builds the covariate designs of all terms on the training data.
///
/// Non-intercept terms are centered over the observations when the model has
/// an intercept, and every term is made orthogonal to the designs of terms on
/// proper subsets of its covariates. The smoothing parameter of each term is
/// set so its covariate-direction fit has the target df, capped at the
/// number of columns.
pub fn build_terms(
    spec: &ModelSpec,
    data: &DataTable,
    default_df: f64,
) -> Result<(Vec<TermFit>, Vec<DMatrix<f64>>)> {
    spec.validate()?;
    if data.n_rows() == 0 {
        return Err(Error::Data("no observations".into()));
    }
    let sets: Vec<BTreeSet<&str>> = spec.terms.iter().map(TermSpec::covariate_set).collect();
    let has_intercept = spec.has_intercept();
    let mut fits: Vec<Option<TermFit>> = vec![None; spec.terms.len()];
    let mut done: Vec<Option<DMatrix<f64>>> = vec![None; spec.terms.len()];
    for i in build_order(&sets) {
        let ts = &spec.terms[i];
        let name = ts.display_name();
        let factors = factors_for(ts, data)?;
        let parents: Vec<usize> = (0..sets.len())
            .filter(|&j| !sets[j].is_empty() && sets[j].len() < sets[i].len() && sets[j].is_subset(&sets[i]))
            .collect();
        let is_intercept = ts.kind == TermKind::Intercept;
        let mut term = TermFit {
            name: name.clone(),
            kind: ts.kind,
            covariates: ts.covariates.clone(),
            factors,
            parents,
            centered: has_intercept && !is_intercept,
            projection: DMatrix::zeros(0, 0),
            transform: DMatrix::zeros(0, 0),
            penalty: DMatrix::zeros(0, 0),
            lambda: 0.0,
            df: 0.0,
        };
        let raw = term.raw(data)?;
        let anchors = term.anchors(data, &done);
        let xc = match &anchors {
            Some(a) => {
                term.projection = pseudo_inverse(a) * &raw;
                &raw - a * &term.projection
            }
            None => {
                term.projection = DMatrix::zeros(0, raw.ncols());
                raw.clone()
            }
        };
        term.transform = match surviving_directions(&xc, &name)? {
            Some(z) => z,
            None => DMatrix::identity(raw.ncols(), raw.ncols()),
        };
        let x = xc * &term.transform;
        if is_intercept {
            term.penalty = DMatrix::zeros(1, 1);
            term.df = 1.0;
        } else {
            let raw_pen = term_penalty(&term.factors)?;
            term.penalty = term.transform.transpose() * raw_pen * &term.transform;
            let target = ts.df.unwrap_or(default_df);
            let k = x.ncols() as f64;
            if target >= k - 1e-9 {
                term.lambda = 0.0;
                term.df = k;
            } else {
                term.lambda = calibrate_df(&x, &term.penalty, target)?;
                term.df = target;
            }
        }
        done[i] = Some(x);
        fits[i] = Some(term);
    }
    Ok((
        fits.into_iter().map(|t| t.expect("built")).collect(),
        done.into_iter().map(|d| d.expect("built")).collect(),
    ))
}
