//! Odds-based reading of fitted effects.
//!
//! Support points are addressed by their index in the value layout of the
//! reference measure (atoms first, then grid cells); [`support_index`] maps a
//! location to that index.

use nalgebra::DMatrix;

use crate::bayes::{ClrElement, DensityElement};
use crate::error::{Error, Result};
use crate::measure::{MeasureKind, ReferenceMeasure};
use crate::model::{CovariateValue, DataTable, FittedModel};

/// Index of the support point at `x`: an atom if `x` is one, otherwise the
/// grid cell containing `x`.
pub fn support_index(measure: &ReferenceMeasure, x: f64) -> Result<usize> {
    if let Some(i) = measure
        .atoms()
        .iter()
        .position(|a| (a.location - x).abs() <= 1e-12)
    {
        return Ok(i);
    }
    let (a, b) = measure
        .interval()
        .ok_or_else(|| Error::InvalidArgument(format!("{x} is not an atom")))?;
    if !(a..=b).contains(&x) {
        return Err(Error::InvalidArgument(format!("{x} outside [{a}, {b}]")));
    }
    let g = measure.grid_size();
    let cell = (((x - a) / (b - a)) * g as f64).floor() as usize;
    Ok(measure.n_atoms() + cell.min(g - 1))
}

fn check_index(len: usize, i: usize) -> Result<()> {
    if i >= len {
        return Err(Error::InvalidArgument(format!("support index {i} out of range")));
    }
    Ok(())
}

/// `clr[h](t) − clr[h](s)`, the log odds of `h` for `t` against `s`.
pub fn log_odds(effect: &ClrElement, t: usize, s: usize) -> Result<f64> {
    let v = effect.values();
    check_index(v.len(), t)?;
    check_index(v.len(), s)?;
    Ok(v[t] - v[s])
}

/// Log odds ratio of `h_j` against `h_k` for `t` compared to `s`.
pub fn log_odds_ratio(j: &ClrElement, k: &ClrElement, t: usize, s: usize) -> Result<f64> {
    if !crate::bayes::same_measure(j.measure(), k.measure()) {
        return Err(Error::MeasureMismatch);
    }
    Ok(log_odds(j, t, s)? - log_odds(k, t, s)?)
}

/// `h(t) / exp S(h)`, the odds of `h` for `t` against its geometric mean.
pub fn geometric_mean_odds(effect: &DensityElement, t: usize) -> Result<f64> {
    check_index(effect.values().len(), t)?;
    Ok(effect.clr().values()[t].exp())
}

/// `h(t) / exp S_λ(h)` for an atom `t` (index among the atoms) of a mixed
/// measure: the odds of the point mass against the continuous geometric mean.
pub fn mixed_discrete_odds(effect: &DensityElement, atom: usize) -> Result<f64> {
    let m = effect.measure();
    if m.kind() != MeasureKind::Mixed {
        return Err(Error::WrongMeasureKind("mixed"));
    }
    if atom >= m.n_atoms() {
        return Err(Error::InvalidArgument(format!("atom {atom} out of range")));
    }
    Ok((effect.values()[atom].ln() - effect.mean_log_continuous()?).exp())
}

/// Probability of the support points `indices` under `f`.
pub fn probability(f: &DensityElement, indices: &[usize]) -> Result<f64> {
    let w = f.measure().weights();
    let mut mass = 0.0;
    for &i in indices {
        check_index(w.len(), i)?;
        mass += w[i] * f.values()[i];
    }
    Ok(mass / f.integral())
}

/// A binary contrast on one covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub covariate: String,
    pub treated: CovariateValue,
    pub control: CovariateValue,
}

impl Contrast {
    pub fn new(covariate: &str, treated: CovariateValue, control: CovariateValue) -> Self {
        Self {
            covariate: covariate.to_string(),
            treated,
            control,
        }
    }
}

/// `(f_{a1,b1} ⊖ f_{a0,b1}) ⊖ (f_{a1,b0} ⊖ f_{a0,b0})` at the first row of `base`.
pub fn did_effect(
    model: &FittedModel,
    base: &DataTable,
    a: &Contrast,
    b: &Contrast,
) -> Result<DensityElement> {
    if base.n_rows() == 0 {
        return Err(Error::Data("no covariate row given".into()));
    }
    let row = base.select_rows(&[0])?;
    let predict = |av: &CovariateValue, bv: &CovariateValue| -> Result<DensityElement> {
        let t = row
            .with_constant(&a.covariate, av)?
            .with_constant(&b.covariate, bv)?;
        Ok(model.predict(&t)?.remove(0))
    };
    let f11 = predict(&a.treated, &b.treated)?;
    let f01 = predict(&a.control, &b.treated)?;
    let f10 = predict(&a.treated, &b.control)?;
    let f00 = predict(&a.control, &b.control)?;
    f11.difference(&f01)?.difference(&f10.difference(&f00)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Atom,
    Grid,
    /// The continuous component as a whole, compared through its geometric mean.
    Continuous,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Atom => "atom",
            PointKind::Grid => "grid",
            PointKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapPoint {
    pub kind: PointKind,
    /// Location in the support; for the continuous aggregate, its label.
    pub location: f64,
}

/// Log odds `LO(t, s)` between all pairs of selected points.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub points: Vec<HeatmapPoint>,
    pub log_odds: DMatrix<f64>,
}

/// Points are ordered: continuous aggregate (mixed measures only), atoms
/// below the interval, every `stride`-th grid node so that at most
/// `resolution` remain, atoms above the interval.
pub fn heatmap(effect: &DensityElement, resolution: usize) -> Result<HeatmapGrid> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("heatmap resolution must be positive".into()));
    }
    let m = effect.measure();
    let logs: Vec<f64> = effect.values().iter().map(|v| v.ln()).collect();
    let mut points = Vec::new();
    let mut level = Vec::new();
    if m.kind() == MeasureKind::Mixed {
        points.push(HeatmapPoint {
            kind: PointKind::Continuous,
            location: m.continuous_label().expect("mixed has a label"),
        });
        level.push(effect.mean_log_continuous()?);
    }
    let split = m.interval().map_or(f64::INFINITY, |(a, _)| a);
    let mut atoms: Vec<usize> = (0..m.n_atoms()).collect();
    atoms.sort_by(|&i, &j| m.atoms()[i].location.total_cmp(&m.atoms()[j].location));
    let (low, high): (Vec<usize>, Vec<usize>) =
        atoms.into_iter().partition(|&i| m.atoms()[i].location <= split);
    let push_atoms = |idx: &[usize], points: &mut Vec<HeatmapPoint>, level: &mut Vec<f64>| {
        for &i in idx {
            points.push(HeatmapPoint {
                kind: PointKind::Atom,
                location: m.atoms()[i].location,
            });
            level.push(logs[i]);
        }
    };
    push_atoms(&low, &mut points, &mut level);
    let g = m.grid_size();
    if g > 0 {
        let stride = g.div_ceil(resolution);
        for (c, &node) in m.grid_nodes().iter().enumerate().skip(stride / 2).step_by(stride) {
            points.push(HeatmapPoint {
                kind: PointKind::Grid,
                location: node,
            });
            level.push(logs[m.n_atoms() + c]);
        }
    }
    push_atoms(&high, &mut points, &mut level);
    let n = points.len();
    let log_odds = DMatrix::from_fn(n, n, |r, c| level[r] - level[c]);
    Ok(HeatmapGrid { points, log_odds })
}

/// Masses of `I = {g ≥ α}` and its complement before and after perturbing
/// `f` by `g`; both densities are normalized first.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSplit {
    pub inside: Vec<usize>,
    pub before_inside: f64,
    pub after_inside: f64,
    pub before_outside: f64,
    pub after_outside: f64,
}

pub fn threshold_split(f: &DensityElement, g: &DensityElement, alpha: f64) -> Result<ThresholdSplit> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {alpha}")));
    }
    let g = g.normalized();
    let after = f.perturb(&g)?;
    let inside: Vec<usize> = (0..g.values().len())
        .filter(|&i| g.values()[i] >= alpha)
        .collect();
    let outside: Vec<usize> = (0..g.values().len())
        .filter(|&i| g.values()[i] < alpha)
        .collect();
    Ok(ThresholdSplit {
        before_inside: probability(f, &inside)?,
        after_inside: probability(&after, &inside)?,
        before_outside: probability(f, &outside)?,
        after_outside: probability(&after, &outside)?,
        inside,
    })
}

#[cfg(test)]
mod tests;
