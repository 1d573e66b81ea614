//! From weighted individual observations to mixed response densities.
//!
//! Values equal to an atom of the reference measure count towards that
//! atom's probability; the rest are smoothed with the boundary-corrected beta
//! kernel on the continuous interval (mapped affinely onto `[0, 1]`).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::bayes::DensityElement;
use crate::error::{Error, Result};
use crate::measure::ReferenceMeasure;

/// Tolerance for matching an observation to an atom.
pub const ATOM_TOLERANCE: f64 = 1e-12;

/// Bandwidth used when a group has too few interior observations to select one.
pub const FALLBACK_BANDWIDTH: f64 = 0.02;

fn atom_of(measure: &ReferenceMeasure, v: f64) -> Option<usize> {
    measure
        .atoms()
        .iter()
        .position(|at| (at.location - v).abs() <= ATOM_TOLERANCE)
}

/// Weighted observations sharing one covariate combination. Weights are
/// normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGroup {
    pub key: Vec<String>,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl ObservationGroup {
    pub fn new(key: Vec<String>, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data(format!("group {key:?} has no observations")));
        }
        if values.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                got: weights.len(),
            });
        }
        if let Some(i) = values.iter().zip(&weights).position(|(v, w)| !(v.is_finite() && w.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Data(format!("group {key:?} has a negative weight")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Data(format!("group {key:?} has zero total weight")));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { key, values, weights })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn default_min() -> f64 {
    0.005
}
fn default_max() -> f64 {
    0.25
}
fn default_count() -> usize {
    30
}
fn default_floor() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeConfig {
    /// Fixed bandwidth on the unit scale; selected by UCV when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Geometric bandwidth grid searched by UCV.
    #[serde(default = "default_min")]
    pub bandwidth_min: f64,
    #[serde(default = "default_max")]
    pub bandwidth_max: f64,
    #[serde(default = "default_count")]
    pub bandwidth_count: usize,
    /// Positivity floor as a fraction of the uniform density level.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self {
            bandwidth: None,
            bandwidth_min: default_min(),
            bandwidth_max: default_max(),
            bandwidth_count: default_count(),
            floor: default_floor(),
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {b}")));
            }
        }
        if !(self.bandwidth_min > 0.0 && self.bandwidth_max >= self.bandwidth_min)
            || !self.bandwidth_max.is_finite()
        {
            return Err(Error::InvalidConfig(
                "bandwidth grid needs 0 < bandwidth_min <= bandwidth_max".into(),
            ));
        }
        if self.bandwidth_count == 0 {
            return Err(Error::InvalidConfig("bandwidth_count must be positive".into()));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::InvalidConfig("floor must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Ascending geometric grid from `bandwidth_min` to `bandwidth_max`.
    pub fn bandwidth_grid(&self) -> Vec<f64> {
        let n = self.bandwidth_count;
        if n == 1 {
            return vec![self.bandwidth_min];
        }
        let ratio = (self.bandwidth_max / self.bandwidth_min).ln() / (n - 1) as f64;
        (0..n)
            .map(|k| self.bandwidth_min * (ratio * k as f64).exp())
            .collect()
    }
}

/// `ρ(t, b) = 2b² + 2.5 − √(4b⁴ + 6b² + 2.25 − t² − t/b)`.
pub fn rho(t: f64, b: f64) -> f64 {
    let b2 = b * b;
    2.0 * b2 + 2.5 - (4.0 * b2 * b2 + 6.0 * b2 + 2.25 - t * t - t / b).sqrt()
}

/// Beta parameters of the kernel evaluated at `t`.
fn kernel_shape(t: f64, b: f64) -> (f64, f64) {
    if t < 2.0 * b {
        (rho(t, b), (1.0 - t) / b)
    } else if t <= 1.0 - 2.0 * b {
        (t / b, (1.0 - t) / b)
    } else {
        (t / b, rho(1.0 - t, b))
    }
}

/// Kernel at one evaluation point, with the log normalizer precomputed.
struct Slice {
    p: f64,
    q: f64,
    log_norm: f64,
}

impl Slice {
    fn new(t: f64, b: f64) -> Self {
        let (p, q) = kernel_shape(t, b);
        Self {
            p,
            q,
            log_norm: ln_beta(p, q),
        }
    }

    /// Density at `x` given `ln x` and `ln(1 − x)`.
    fn eval(&self, ln_x: f64, ln_1mx: f64) -> f64 {
        let term = |e: f64, l: f64| if e == 1.0 { 0.0 } else { (e - 1.0) * l };
        (term(self.p, ln_x) + term(self.q, ln_1mx) - self.log_norm).exp()
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Boundary-corrected beta kernel `K*_{t,b}(x)`.
pub fn beta_kernel(t: f64, b: f64, x: f64) -> Result<f64> {
    check_unit("t", t)?;
    check_unit("x", x)?;
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {b}")));
    }
    Ok(Slice::new(t, b).eval(x.ln(), (1.0 - x).ln()))
}

/// Interval of the continuous part.
fn unit_map(measure: &ReferenceMeasure) -> Result<(f64, f64)> {
    match measure.interval() {
        Some((a, b)) if measure.grid_size() > 0 => Ok((a, b)),
        _ => Err(Error::WrongMeasureKind("continuous or mixed")),
    }
}

/// Kernel matrix `K[g][l] = K*_{t_g,b}(x_l)` for evaluation points `t` and
/// data `x`, both on the unit scale.
fn kernel_matrix(t: &[f64], x: &[f64], b: f64) -> Vec<Vec<f64>> {
    let logs: Vec<(f64, f64)> = x.iter().map(|&v| (v.ln(), (1.0 - v).ln())).collect();
    t.iter()
        .map(|&tg| {
            let s = Slice::new(tg, b);
            logs.iter().map(|&(lx, l1)| s.eval(lx, l1)).collect()
        })
        .collect()
}

/// Interior data on the unit scale.
struct Interior {
    x: Vec<f64>,
    w: Vec<f64>,
}

fn interior(values: &[f64], weights: &[f64], measure: &ReferenceMeasure) -> Result<Interior> {
    let (a, b) = unit_map(measure)?;
    let mut x = Vec::new();
    let mut w = Vec::new();
    for (&v, &wt) in values.iter().zip(weights) {
        if v > a && v < b && atom_of(measure, v).is_none() {
            x.push((v - a) / (b - a));
            w.push(wt);
        }
    }
    Ok(Interior { x, w })
}

fn unit_nodes(measure: &ReferenceMeasure) -> Result<Vec<f64>> {
    let (a, b) = unit_map(measure)?;
    Ok(measure.grid_nodes().iter().map(|t| (t - a) / (b - a)).collect())
}

/// `(Σ q_g v_g)` over the grid.
fn grid_integral(measure: &ReferenceMeasure, v: &[f64]) -> f64 {
    measure.grid_weights().iter().zip(v).map(|(q, f)| q * f).sum()
}

/// Weighted beta-kernel estimate on the grid of `measure`, normalized to
/// integrate to one over the continuous part. Only values strictly inside
/// the interval and off the atoms contribute.
pub fn kde(values: &[f64], weights: &[f64], b: f64, measure: &ReferenceMeasure) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch {
            expected: values.len(),
            got: weights.len(),
        });
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {b}")));
    }
    let d = interior(values, weights, measure)?;
    if d.w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Data("no interior observations".into()));
    }
    let k = kernel_matrix(&unit_nodes(measure)?, &d.x, b);
    let raw: Vec<f64> = k
        .iter()
        .map(|row| row.iter().zip(&d.w).map(|(k, w)| k * w).sum())
        .collect();
    let total = grid_integral(measure, &raw);
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("kernel estimate integrates to {total}")));
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Weighted unbiased cross-validation score
/// `∫ f̂_b² − 2 Σ_l w_l f̂_b^{(−l)}(x_l)`, where the leave-one-out estimate
/// renormalizes the remaining weights and is itself normalized on the grid.
pub fn ucv(values: &[f64], weights: &[f64], b: f64, measure: &ReferenceMeasure) -> Result<f64> {
    let d = interior(values, weights, measure)?;
    let total_w: f64 = d.w.iter().sum();
    if d.x.len() < 2 || total_w <= 0.0 {
        return Err(Error::Data("UCV needs at least two interior observations".into()));
    }
    let w: Vec<f64> = d.w.iter().map(|v| v / total_w).collect();
    let q = measure.grid_weights();
    let grid = kernel_matrix(&unit_nodes(measure)?, &d.x, b);
    // per-observation kernel mass on the grid
    let mut mass = vec![0.0; d.x.len()];
    for (row, qg) in grid.iter().zip(q) {
        for (m, k) in mass.iter_mut().zip(row) {
            *m += qg * k;
        }
    }
    let c: f64 = mass.iter().zip(&w).map(|(m, w)| m * w).sum();
    let square: f64 = grid
        .iter()
        .zip(q)
        .map(|(row, qg)| {
            let f: f64 = row.iter().zip(&w).map(|(k, w)| k * w).sum::<f64>() / c;
            qg * f * f
        })
        .sum();
    let at_data = kernel_matrix(&d.x, &d.x, b);
    let mut cross = 0.0;
    for (l, row) in at_data.iter().enumerate() {
        let s: f64 = row.iter().zip(&w).map(|(k, w)| k * w).sum();
        let num = s - w[l] * row[l];
        let den = c - w[l] * mass[l];
        if den <= 0.0 {
            return Err(Error::Data("a single observation carries all weight".into()));
        }
        cross += w[l] * num / den;
    }
    Ok(square - 2.0 * cross)
}

/// UCV-optimal bandwidth from the configured grid, or
/// [`FALLBACK_BANDWIDTH`] for fewer than three interior observations.
/// Returns the bandwidth and whether it was actually selected.
pub fn select_bandwidth(
    group: &ObservationGroup,
    cfg: &KdeConfig,
    measure: &ReferenceMeasure,
) -> Result<(f64, bool)> {
    let d = interior(group.values(), group.weights(), measure)?;
    let positive = d.w.iter().filter(|w| **w > 0.0).count();
    if positive < 3 {
        return Ok((FALLBACK_BANDWIDTH, false));
    }
    let mut best: Option<(f64, f64)> = None;
    for b in cfg.bandwidth_grid() {
        let score = ucv(group.values(), group.weights(), b, measure)?;
        if score.is_finite() && best.is_none_or(|(_, s)| score < s) {
            best = Some((b, score));
        }
    }
    match best {
        Some((b, _)) => Ok((b, true)),
        None => Ok((FALLBACK_BANDWIDTH, false)),
    }
}

/// The bandwidth applied to all groups: the fixed one if configured,
/// otherwise the smallest per-group UCV optimum. Groups that fall back do not
/// take part; if all do, the fallback is used.
pub fn common_bandwidth(
    groups: &[ObservationGroup],
    cfg: &KdeConfig,
    measure: &ReferenceMeasure,
) -> Result<f64> {
    cfg.validate()?;
    if let Some(b) = cfg.bandwidth {
        return Ok(b);
    }
    let chosen = groups
        .par_iter()
        .map(|g| select_bandwidth(g, cfg, measure))
        .collect::<Result<Vec<_>>>()?;
    Ok(chosen
        .into_iter()
        .filter(|(_, selected)| *selected)
        .map(|(b, _)| b)
        .reduce(f64::min)
        .unwrap_or(FALLBACK_BANDWIDTH))
}

/// Shares of a group: probability of each atom and of the interval interior.
#[derive(Debug, Clone, PartialEq)]
pub struct Shares {
    pub atoms: Vec<f64>,
    pub interior: f64,
}

pub fn shares(group: &ObservationGroup, measure: &ReferenceMeasure) -> Result<Shares> {
    let (a, b) = unit_map(measure)?;
    let mut atoms = vec![0.0; measure.n_atoms()];
    for (&v, &w) in group.values().iter().zip(group.weights()) {
        match atom_of(measure, v) {
            Some(d) => atoms[d] += w,
            None if v > a && v < b => {}
            None => {
                return Err(Error::Data(format!(
                    "value {v} is neither an atom nor inside ({a}, {b})"
                )))
            }
        }
    }
    // the complement keeps the shares summing to one
    let interior = (1.0 - atoms.iter().sum::<f64>()).max(0.0);
    Ok(Shares { atoms, interior })
}

/// Mixed response density of a group: atom values `p_d / w_d`, grid values
/// `p_interior · f̂_b`, then floored at `floor / μ(T)` and renormalized.
pub fn assemble_mixed(
    group: &ObservationGroup,
    measure: &Arc<ReferenceMeasure>,
    b: f64,
    floor: f64,
) -> Result<DensityElement> {
    let p = shares(group, measure)?;
    let mut out = vec![0.0; measure.len()];
    for (d, at) in measure.atoms().iter().enumerate() {
        out[d] = p.atoms[d] / at.weight;
    }
    if p.interior > 0.0 {
        let f = kde(group.values(), group.weights(), b, measure)?;
        for (slot, v) in out[measure.grid_range()].iter_mut().zip(f) {
            *slot = p.interior * v;
        }
    }
    let level = floor / measure.total_mass();
    for v in &mut out {
        *v = v.max(level);
    }
    Ok(DensityElement::new(measure.clone(), out)?.normalized())
}

/// Per-group report of [`estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub key: Vec<String>,
    pub n: usize,
    pub shares: Shares,
    pub bandwidth: f64,
}

/// Densities for all groups with the common bandwidth.
pub fn estimate(
    groups: &[ObservationGroup],
    measure: &Arc<ReferenceMeasure>,
    cfg: &KdeConfig,
) -> Result<Vec<(DensityElement, GroupSummary)>> {
    let b = common_bandwidth(groups, cfg, measure)?;
    groups
        .par_iter()
        .map(|g| {
            let f = assemble_mixed(g, measure, b, cfg.floor)?;
            let summary = GroupSummary {
                key: g.key.clone(),
                n: g.len(),
                shares: shares(g, measure)?,
                bandwidth: b,
            };
            Ok((f, summary))
        })
        .collect()
}
