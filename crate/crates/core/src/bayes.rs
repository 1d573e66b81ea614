//! Bayes Hilbert space arithmetic on a finite reference measure.
//!
//! Densities are equivalence classes under positive rescaling; every
//! operation here returns the probability representative (unit integral).
//! The clr transform maps them isometrically onto zero-integral sequences,
//! where perturbation and powering become addition and scaling.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::{MeasureKind, ReferenceMeasure};

pub(crate) fn same_measure(a: &Arc<ReferenceMeasure>, b: &Arc<ReferenceMeasure>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

fn ensure_same(a: &Arc<ReferenceMeasure>, b: &Arc<ReferenceMeasure>) -> Result<()> {
    if same_measure(a, b) {
        Ok(())
    } else {
        Err(Error::MeasureMismatch)
    }
}

/// μ-weighted mean of `values`.
fn mean(measure: &ReferenceMeasure, values: &[f64]) -> f64 {
    measure.dot(values) / measure.total_mass()
}

/// A positive density on a reference measure, up to scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityElement {
    measure: Arc<ReferenceMeasure>,
    values: Vec<f64>,
}

/// The clr image of a density: a real sequence with zero μ-integral.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrElement {
    measure: Arc<ReferenceMeasure>,
    values: Vec<f64>,
}

impl DensityElement {
    /// Wraps `values` as given. Every value must be finite and strictly positive.
    pub fn new(measure: Arc<ReferenceMeasure>, values: Vec<f64>) -> Result<Self> {
        measure.check_len(values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveDensity { index, value });
        }
        Ok(Self { measure, values })
    }

    /// The neutral element, as the uniform probability density.
    pub fn uniform(measure: Arc<ReferenceMeasure>) -> Self {
        let level = 1.0 / measure.total_mass();
        let values = vec![level; measure.len()];
        Self { measure, values }
    }

    /// Builds the probability density proportional to `exp(log_values)`.
    pub fn from_log_values(measure: Arc<ReferenceMeasure>, log_values: &[f64]) -> Result<Self> {
        measure.check_len(log_values.len())?;
        if let Some(i) = log_values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let shift = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values: Vec<f64> = log_values.iter().map(|v| (v - shift).exp()).collect();
        let element = Self { measure, values };
        Ok(element.normalized())
    }

    pub fn measure(&self) -> &Arc<ReferenceMeasure> {
        &self.measure
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integral(&self) -> f64 {
        self.measure.dot(&self.values)
    }

    /// The probability representative of this class.
    pub fn normalized(&self) -> Self {
        let total = self.integral();
        Self {
            measure: self.measure.clone(),
            values: self.values.iter().map(|v| v / total).collect(),
        }
    }

    /// Value at a support point given by location (atom or grid node).
    pub fn value_at(&self, location: f64) -> Option<f64> {
        self.measure
            .locations()
            .iter()
            .position(|&t| t == location)
            .map(|i| self.values[i])
    }

    fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.ln()).collect()
    }

    /// `f ⊕ g`: pointwise product, renormalized.
    pub fn perturb(&self, other: &Self) -> Result<Self> {
        ensure_same(&self.measure, &other.measure)?;
        let logs: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.ln() + b.ln())
            .collect();
        Self::from_log_values(self.measure.clone(), &logs)
    }

    /// `α ⊙ f`: pointwise power, renormalized.
    pub fn power(&self, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("power {alpha} is not finite")));
        }
        let logs: Vec<f64> = self.values.iter().map(|v| alpha * v.ln()).collect();
        Self::from_log_values(self.measure.clone(), &logs)
    }

    /// `⊖ f`, the additive inverse `1/f`.
    pub fn inverse(&self) -> Self {
        let logs: Vec<f64> = self.values.iter().map(|v| -v.ln()).collect();
        Self::from_log_values(self.measure.clone(), &logs).expect("finite logs")
    }

    /// `f ⊖ g`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        ensure_same(&self.measure, &other.measure)?;
        let logs: Vec<f64> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.ln() - b.ln())
            .collect();
        Self::from_log_values(self.measure.clone(), &logs)
    }

    /// Mean logarithm `S(f) = μ(T)^{-1} ∫ log f dμ`.
    pub fn mean_log(&self) -> f64 {
        mean(&self.measure, &self.log_values())
    }

    /// Mean logarithm over the continuous part, `λ(I)^{-1} ∫ log f dλ`.
    pub fn mean_log_continuous(&self) -> Result<f64> {
        if self.measure.grid_size() == 0 {
            return Err(Error::WrongMeasureKind("continuous or mixed"));
        }
        let range = self.measure.grid_range();
        let q = self.measure.grid_weights();
        let s: f64 = q
            .iter()
            .zip(&self.values[range])
            .map(|(w, v)| w * v.ln())
            .sum();
        Ok(s / self.measure.continuous_mass())
    }

    /// Geometric mean `exp S(f)` over the whole support.
    pub fn geometric_mean_full(&self) -> f64 {
        self.mean_log().exp()
    }

    /// Geometric mean `exp S_λ(f)` over the continuous part.
    pub fn geometric_mean_continuous(&self) -> Result<f64> {
        Ok(self.mean_log_continuous()?.exp())
    }

    pub fn clr(&self) -> ClrElement {
        let logs = self.log_values();
        let s = mean(&self.measure, &logs);
        ClrElement {
            measure: self.measure.clone(),
            values: logs.into_iter().map(|v| v - s).collect(),
        }
    }

    /// `⟨f, g⟩_B = ∫ clr f · clr g dμ`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        ensure_same(&self.measure, &other.measure)?;
        self.clr().inner(&other.clr())
    }

    pub fn norm_sq(&self) -> f64 {
        self.clr().norm_sq()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Whether two representatives belong to the same class: their ratio is
    /// constant up to relative tolerance `tol`.
    pub fn equivalent(&self, other: &Self, tol: f64) -> bool {
        if !same_measure(&self.measure, &other.measure) {
            return false;
        }
        let a = self.normalized();
        let b = other.normalized();
        a.values
            .iter()
            .zip(&b.values)
            .all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()))
    }

    /// Orthogonal projection onto the subspace of densities on the sub-support
    /// selected by `mask`: keep `f` there and fill the rest with the geometric
    /// mean of `f` over the sub-support.
    pub fn project_subcomposition(&self, mask: &[bool]) -> Result<Self> {
        self.measure.check_len(mask.len())?;
        let w = self.measure.weights();
        let (mut mass, mut acc) = (0.0, 0.0);
        for ((&m, &wi), &v) in mask.iter().zip(w).zip(&self.values) {
            if m {
                mass += wi;
                acc += wi * v.ln();
            }
        }
        if mass == 0.0 {
            return Err(Error::InvalidArgument("empty sub-support".into()));
        }
        let fill = acc / mass;
        let logs: Vec<f64> = mask
            .iter()
            .zip(&self.values)
            .map(|(&m, v)| if m { v.ln() } else { fill })
            .collect();
        Self::from_log_values(self.measure.clone(), &logs)
    }
}

impl ClrElement {
    /// Wraps `values`, checking the zero-integral invariant to `1e-8`
    /// relative to the μ-mass of `|values|`.
    pub fn new(measure: Arc<ReferenceMeasure>, values: Vec<f64>) -> Result<Self> {
        measure.check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let integral = measure.dot(&values);
        let scale: f64 = measure
            .weights()
            .iter()
            .zip(&values)
            .map(|(w, v)| w * v.abs())
            .sum();
        if integral.abs() > 1e-8 * scale.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "clr values integrate to {integral}, expected 0"
            )));
        }
        Ok(Self { measure, values })
    }

    /// Projects arbitrary values onto the zero-integral subspace by
    /// subtracting their μ-mean.
    pub fn centered(measure: Arc<ReferenceMeasure>, mut values: Vec<f64>) -> Result<Self> {
        measure.check_len(values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let m = mean(&measure, &values);
        values.iter_mut().for_each(|v| *v -= m);
        Ok(Self { measure, values })
    }

    pub fn zero(measure: Arc<ReferenceMeasure>) -> Self {
        let values = vec![0.0; measure.len()];
        Self { measure, values }
    }

    pub fn measure(&self) -> &Arc<ReferenceMeasure> {
        &self.measure
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integral(&self) -> f64 {
        self.measure.dot(&self.values)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        ensure_same(&self.measure, &other.measure)?;
        Ok(Self {
            measure: self.measure.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        ensure_same(&self.measure, &other.measure)?;
        Ok(Self {
            measure: self.measure.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            measure: self.measure.clone(),
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `∫ z w dμ`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        ensure_same(&self.measure, &other.measure)?;
        self.measure.inner(&self.values, &other.values)
    }

    pub fn norm_sq(&self) -> f64 {
        self.measure
            .inner(&self.values, &self.values)
            .expect("aligned by construction")
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Inverse clr: `exp z`, renormalized.
    pub fn to_density(&self) -> DensityElement {
        DensityElement::from_log_values(self.measure.clone(), &self.values)
            .expect("clr values are finite")
    }
}

pub fn perturb(f: &DensityElement, g: &DensityElement) -> Result<DensityElement> {
    f.perturb(g)
}

pub fn power(alpha: f64, f: &DensityElement) -> Result<DensityElement> {
    f.power(alpha)
}

pub fn clr(f: &DensityElement) -> ClrElement {
    f.clr()
}

pub fn clr_inv(z: &ClrElement) -> DensityElement {
    z.to_density()
}

pub fn inner(f: &DensityElement, g: &DensityElement) -> Result<f64> {
    f.inner(g)
}

/// Splits a mixed measure `δ + λ` into the continuous space `B²(λ)` and its
/// orthogonal complement `B²(δ•)`, where `δ•` adds a point `t_{D+1}` of
/// weight `λ(I)` standing in for the continuous part.
#[derive(Debug, Clone)]
pub struct MixedSplit {
    full: Arc<ReferenceMeasure>,
    continuous: Arc<ReferenceMeasure>,
    discrete: Arc<ReferenceMeasure>,
    /// Position of each original atom within the discrete component.
    atom_positions: Vec<usize>,
    label_position: usize,
}

impl MixedSplit {
    pub fn new(full: Arc<ReferenceMeasure>) -> Result<Self> {
        if full.kind() != MeasureKind::Mixed {
            return Err(Error::WrongMeasureKind("mixed"));
        }
        let continuous = Arc::new(full.continuous_component()?);
        let discrete = Arc::new(full.discrete_component()?);
        let atom_positions = full
            .atoms()
            .iter()
            .map(|a| discrete.atom_index(a.location).expect("atom carried over"))
            .collect();
        let label = full.continuous_label().expect("mixed has a label");
        let label_position = discrete.atom_index(label).expect("label is an atom");
        Ok(Self {
            full,
            continuous,
            discrete,
            atom_positions,
            label_position,
        })
    }

    pub fn full(&self) -> &Arc<ReferenceMeasure> {
        &self.full
    }

    pub fn continuous(&self) -> &Arc<ReferenceMeasure> {
        &self.continuous
    }

    pub fn discrete(&self) -> &Arc<ReferenceMeasure> {
        &self.discrete
    }

    /// Index of `t_{D+1}` within discrete-component value sequences.
    pub fn label_position(&self) -> usize {
        self.label_position
    }

    pub fn atom_positions(&self) -> &[usize] {
        &self.atom_positions
    }

    /// The unique `(f_c, f_d)` with `f = ι_c(f_c) ⊕ ι_d(f_d)`.
    pub fn decompose(&self, f: &DensityElement) -> Result<(DensityElement, DensityElement)> {
        ensure_same(&self.full, f.measure())?;
        let grid = &f.values()[self.full.grid_range()];
        let fc = DensityElement::new(self.continuous.clone(), grid.to_vec())?.normalized();
        let s = f.mean_log_continuous()?;
        let mut logs = vec![0.0; self.discrete.len()];
        for (k, &pos) in self.atom_positions.iter().enumerate() {
            logs[pos] = f.values()[k].ln() - s;
        }
        logs[self.label_position] = 0.0;
        let fd = DensityElement::from_log_values(self.discrete.clone(), &logs)?;
        Ok((fc, fd))
    }

    /// `ι_c`: atoms take the continuous geometric mean.
    pub fn embed_continuous(&self, fc: &DensityElement) -> Result<DensityElement> {
        ensure_same(&self.continuous, fc.measure())?;
        let s = fc.mean_log_continuous()?;
        let mut logs = vec![s; self.full.len()];
        for (slot, v) in logs[self.full.grid_range()].iter_mut().zip(fc.values()) {
            *slot = v.ln();
        }
        DensityElement::from_log_values(self.full.clone(), &logs)
    }

    /// `ι_d`: the grid takes the value at `t_{D+1}`.
    pub fn embed_discrete(&self, fd: &DensityElement) -> Result<DensityElement> {
        ensure_same(&self.discrete, fd.measure())?;
        let fill = fd.values()[self.label_position].ln();
        let mut logs = vec![fill; self.full.len()];
        for (k, &pos) in self.atom_positions.iter().enumerate() {
            logs[k] = fd.values()[pos].ln();
        }
        DensityElement::from_log_values(self.full.clone(), &logs)
    }

    /// `ι_c(f_c) ⊕ ι_d(f_d)`.
    pub fn combine(&self, fc: &DensityElement, fd: &DensityElement) -> Result<DensityElement> {
        self.embed_continuous(fc)?.perturb(&self.embed_discrete(fd)?)
    }

    /// clr-level decomposition: `z_c` is `z` on the grid minus its grid mean,
    /// `z_d` is `z` on the atoms with the grid mean at `t_{D+1}`.
    pub fn decompose_clr(&self, z: &ClrElement) -> Result<(ClrElement, ClrElement)> {
        ensure_same(&self.full, z.measure())?;
        let grid = &z.values()[self.full.grid_range()];
        let q = self.full.grid_weights();
        let grid_mean: f64 =
            q.iter().zip(grid).map(|(w, v)| w * v).sum::<f64>() / self.full.continuous_mass();
        let zc = ClrElement {
            measure: self.continuous.clone(),
            values: grid.iter().map(|v| v - grid_mean).collect(),
        };
        let mut zd = vec![0.0; self.discrete.len()];
        for (k, &pos) in self.atom_positions.iter().enumerate() {
            zd[pos] = z.values()[k];
        }
        zd[self.label_position] = grid_mean;
        let zd = ClrElement {
            measure: self.discrete.clone(),
            values: zd,
        };
        Ok((zc, zd))
    }

    /// `ι̃_c`: zero on the atoms.
    pub fn embed_clr_continuous(&self, zc: &ClrElement) -> Result<ClrElement> {
        ensure_same(&self.continuous, zc.measure())?;
        let mut values = vec![0.0; self.full.len()];
        values[self.full.grid_range()].copy_from_slice(zc.values());
        Ok(ClrElement {
            measure: self.full.clone(),
            values,
        })
    }

    /// `ι̃_d`: the grid takes the value at `t_{D+1}`.
    pub fn embed_clr_discrete(&self, zd: &ClrElement) -> Result<ClrElement> {
        ensure_same(&self.discrete, zd.measure())?;
        let mut values = vec![zd.values()[self.label_position]; self.full.len()];
        for (k, &pos) in self.atom_positions.iter().enumerate() {
            values[k] = zd.values()[pos];
        }
        Ok(ClrElement {
            measure: self.full.clone(),
            values,
        })
    }

    /// Writes `ι̃_c(z_c) + ι̃_d(z_d)` for raw value slices into `out`.
    pub(crate) fn combine_clr_values(&self, zc: &[f64], zd: &[f64], out: &mut [f64]) {
        let fill = zd[self.label_position];
        for (k, &pos) in self.atom_positions.iter().enumerate() {
            out[k] = zd[pos];
        }
        for (slot, v) in out[self.full.grid_range()].iter_mut().zip(zc) {
            *slot = v + fill;
        }
    }

    pub fn combine_clr(&self, zc: &ClrElement, zd: &ClrElement) -> Result<ClrElement> {
        ensure_same(&self.continuous, zc.measure())?;
        ensure_same(&self.discrete, zd.measure())?;
        let mut values = vec![0.0; self.full.len()];
        self.combine_clr_values(zc.values(), zd.values(), &mut values);
        Ok(ClrElement {
            measure: self.full.clone(),
            values,
        })
    }
}

/// Decomposes a density on a mixed measure into its continuous and discrete parts.
pub fn decompose_mixed(f: &DensityElement) -> Result<(DensityElement, DensityElement)> {
    MixedSplit::new(f.measure().clone())?.decompose(f)
}
