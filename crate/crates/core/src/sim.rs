//! Simulation from fitted models: residual FPCA, Karhunen-Loève noise,
//! replicate studies and the error and selection summaries they report.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{same_measure, ClrElement, DensityElement};
use crate::boosting::BoostConfig;
use crate::error::{Error, Result};
use crate::measure::{Atom, ReferenceMeasure};
use crate::model::{fit, rows_to_densities, Component, DataTable, FittedModel, ModelSpec, TermKind, TermSpec};

/// Principal components of clr residuals under the `L²(μ)` inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct FpcaResult {
    measure: Arc<ReferenceMeasure>,
    /// Mean residual, removed before the decomposition.
    pub mean: Vec<f64>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<f64>,
    /// `μ`-orthonormal, one per eigenvalue.
    pub eigenfunctions: Vec<ClrElement>,
    /// `ρ_im = ⟨r_i − r̄, ψ_m⟩`, one row per residual.
    pub scores: DMatrix<f64>,
}

/// Largest admissible number of components for `n` residuals of length `len`.
pub fn max_components(n: usize, len: usize) -> usize {
    n.min(len).saturating_sub(1)
}

impl FpcaResult {
    pub fn measure(&self) -> &Arc<ReferenceMeasure> {
        &self.measure
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Σ_m ρ_m ψ_m` for one row of scores.
    pub fn expand(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.n_components() {
            return Err(Error::LengthMismatch {
                expected: self.n_components(),
                got: scores.len(),
            });
        }
        let mut out = vec![0.0; self.measure.len()];
        for (rho, psi) in scores.iter().zip(&self.eigenfunctions) {
            for (o, p) in out.iter_mut().zip(psi.values()) {
                *o += rho * p;
            }
        }
        Ok(out)
    }
}

pub fn fpca(residuals: &[ClrElement], m: usize) -> Result<FpcaResult> {
    let first = residuals
        .first()
        .ok_or_else(|| Error::Data("no residuals".into()))?;
    let measure = first.measure().clone();
    if residuals.iter().any(|r| !same_measure(&measure, r.measure())) {
        return Err(Error::MeasureMismatch);
    }
    let (n, len) = (residuals.len(), measure.len());
    let bound = max_components(n, len);
    if m == 0 || m > bound {
        return Err(Error::InvalidArgument(format!(
            "{m} components requested, at most {bound} available for {n} residuals of length {len}"
        )));
    }
    let mut mean = vec![0.0; len];
    for r in residuals {
        for (a, v) in mean.iter_mut().zip(r.values()) {
            *a += v / n as f64;
        }
    }
    let root: Vec<f64> = measure.weights().iter().map(|w| w.sqrt()).collect();
    let centered = DMatrix::from_fn(n, len, |i, t| residuals[i].values()[t] - mean[t]);
    let scaled = DMatrix::from_fn(n, len, |i, t| centered[(i, t)] * root[t]);
    let mut cov = scaled.transpose() * &scaled / n as f64;
    // push the constant direction, which every clr function is orthogonal
    // to, below all genuine eigenvalues
    let u = DVector::from_vec(root.clone()).normalize();
    cov -= &u * u.transpose();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues = Vec::with_capacity(m);
    let mut eigenfunctions = Vec::with_capacity(m);
    for &k in &order[..m] {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let psi: Vec<f64> = v.iter().zip(&root).map(|(x, r)| x / r).collect();
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
        eigenfunctions.push(ClrElement::centered(measure.clone(), psi)?);
    }
    let w = measure.weights();
    let scores = DMatrix::from_fn(n, m, |i, k| {
        eigenfunctions[k]
            .values()
            .iter()
            .enumerate()
            .map(|(t, p)| w[t] * centered[(i, t)] * p)
            .sum()
    });
    Ok(FpcaResult {
        measure,
        mean,
        eigenvalues,
        eigenfunctions,
        scores,
    })
}

fn check_means(means: &[DensityElement], fpca: &FpcaResult) -> Result<()> {
    if means.iter().any(|f| !same_measure(f.measure(), fpca.measure())) {
        return Err(Error::MeasureMismatch);
    }
    Ok(())
}

/// `F_i ⊕ clr⁻¹(Σ_m ρ_im ψ_m)` for given scores.
pub fn responses_from_scores(
    means: &[DensityElement],
    fpca: &FpcaResult,
    scores: &DMatrix<f64>,
) -> Result<Vec<DensityElement>> {
    check_means(means, fpca)?;
    if scores.nrows() != means.len() {
        return Err(Error::LengthMismatch {
            expected: means.len(),
            got: scores.nrows(),
        });
    }
    means
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let row: Vec<f64> = scores.row(i).iter().copied().collect();
            let noise = fpca.expand(&row)?;
            let logs: Vec<f64> = f.values().iter().zip(&noise).map(|(v, e)| v.ln() + e).collect();
            DensityElement::from_log_values(f.measure().clone(), &logs)
        })
        .collect()
}

/// Independent scores `ρ̃_im ~ N(0, scale² ξ_m)`.
pub fn draw_scores(n: usize, fpca: &FpcaResult, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let sd: Vec<f64> = fpca.eigenvalues.iter().map(|x| scale * x.sqrt()).collect();
    let mut out = DMatrix::zeros(n, sd.len());
    for i in 0..n {
        for (m, s) in sd.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            out[(i, m)] = s * z;
        }
    }
    out
}

/// Responses around `means` with truncated Karhunen-Loève noise.
pub fn simulate_responses(
    means: &[DensityElement],
    fpca: &FpcaResult,
    seed: u64,
) -> Result<Vec<DensityElement>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = draw_scores(means.len(), fpca, 1.0, &mut rng);
    responses_from_scores(means, fpca, &scores)
}

/// `Σ_i ‖E_i − Ê_i‖² / Σ_i ‖E_i‖²` for clr rows, with equal weight per row.
pub fn rel_mse_clr(measure: &ReferenceMeasure, truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    measure.check_len(truth.ncols())?;
    let w = measure.weights();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..truth.nrows() {
        for (t, wt) in w.iter().enumerate() {
            num += wt * (truth[(i, t)] - estimate[(i, t)]).powi(2);
            den += wt * truth[(i, t)].powi(2);
        }
    }
    // clr rounding leaves neutral elements at ~1e-16, not exactly zero
    if den <= 1e-24 * measure.total_mass() * truth.nrows() as f64 {
        return Err(Error::Numeric(
            "relMSE undefined: the true effect is neutral everywhere".into(),
        ));
    }
    Ok(num / den)
}

/// relMSE of density-valued estimates.
pub fn rel_mse(truth: &[DensityElement], estimate: &[DensityElement]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let first = truth.first().ok_or_else(|| Error::Data("no evaluation points".into()))?;
    let measure = first.measure().clone();
    if truth.iter().chain(estimate).any(|f| !same_measure(&measure, f.measure())) {
        return Err(Error::MeasureMismatch);
    }
    let rows = |fs: &[DensityElement]| {
        let clr: Vec<ClrElement> = fs.iter().map(DensityElement::clr).collect();
        DMatrix::from_fn(fs.len(), measure.len(), |i, t| clr[i].values()[t])
    };
    rel_mse_clr(&measure, &rows(truth), &rows(estimate))
}

/// How often one term was selected across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub term: String,
    /// Selected counts per component, in the order given.
    pub selected: Vec<usize>,
    /// Selected in at least one component.
    pub combined: usize,
    pub replicates: usize,
}

impl SelectionCounts {
    pub fn not_selected(&self) -> Vec<usize> {
        self.selected.iter().map(|s| self.replicates - s).collect()
    }

    pub fn combined_not_selected(&self) -> usize {
        self.replicates - self.combined
    }
}

/// `replicates[r][c]` lists the terms chosen in each iteration of component `c`.
pub fn selection_table(terms: &[String], replicates: &[Vec<Vec<usize>>]) -> Vec<SelectionCounts> {
    let n_comp = replicates.iter().map(Vec::len).max().unwrap_or(0);
    terms
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut selected = vec![0; n_comp];
            let mut combined = 0;
            for rep in replicates {
                let mut any = false;
                for (c, seq) in rep.iter().enumerate() {
                    if seq.contains(&j) {
                        selected[c] += 1;
                        any = true;
                    }
                }
                combined += usize::from(any);
            }
            SelectionCounts {
                term: name.clone(),
                selected,
                combined,
                replicates: replicates.len(),
            }
        })
        .collect()
}

fn default_replicates() -> usize {
    200
}
fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Number of principal components; defaults to the largest admissible.
    #[serde(default)]
    pub components: Option<usize>,
    /// Factor applied to the simulated noise.
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            replicates: default_replicates(),
            components: None,
            noise_scale: default_scale(),
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be positive".into()));
        }
        if self.components == Some(0) {
            return Err(Error::InvalidConfig("components must be positive".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig("noise_scale must be >= 0".into()));
        }
        Ok(())
    }
}

/// Fitted means and the FPCA of the clr residuals of `responses` under `model`.
pub fn residual_fpca(
    model: &FittedModel,
    data: &DataTable,
    responses: &[DensityElement],
    components: Option<usize>,
) -> Result<(Vec<DensityElement>, FpcaResult)> {
    let z = model.predict_clr(data)?;
    let prep = model.prepare()?;
    if responses.len() != z.nrows() {
        return Err(Error::Data(format!(
            "{} responses for {} covariate rows",
            responses.len(),
            z.nrows()
        )));
    }
    let residuals = responses
        .iter()
        .enumerate()
        .map(|(i, y)| {
            if !same_measure(&prep.measure, y.measure()) {
                return Err(Error::MeasureMismatch);
            }
            let c = y.clr();
            let v = c.values().iter().enumerate().map(|(t, v)| v - z[(i, t)]).collect();
            ClrElement::centered(prep.measure.clone(), v)
        })
        .collect::<Result<Vec<_>>>()?;
    let m = components.unwrap_or_else(|| max_components(residuals.len(), prep.measure.len()));
    Ok((rows_to_densities(&prep.measure, &z)?, fpca(&residuals, m)?))
}

/// Outcome of refitting one simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// relMSE of the predicted densities.
    pub rel_mse: f64,
    /// relMSE per term; `None` where the true effect is neutral.
    pub effect_rel_mse: Vec<Option<f64>>,
    pub components: Vec<Component>,
    pub m_stop: Vec<usize>,
    /// Terms chosen in each iteration, per component.
    pub selection: Vec<Vec<usize>>,
    /// In-bag risk trajectory per component.
    pub risk: Vec<Vec<f64>>,
}

/// Simulates `sim.replicates` data sets around the predictions of `truth`
/// and refits its model on each. Replicate `r` draws from its own stream of
/// the master seed and boosts with seed `boost.seed + r`.
pub fn run_study(
    truth: &FittedModel,
    data: &DataTable,
    fpca: &FpcaResult,
    sim: &SimulationConfig,
    boost: &BoostConfig,
) -> Result<Vec<ReplicateResult>> {
    sim.validate()?;
    let means = truth.predict(data)?;
    let prep = truth.prepare()?;
    let true_clr = truth.predict_clr(data)?;
    let true_effects = (0..truth.terms.len())
        .map(|j| truth.effect_clr(j, data))
        .collect::<Result<Vec<_>>>()?;
    (0..sim.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
            rng.set_stream(r as u64 + 1);
            let scores = draw_scores(means.len(), fpca, sim.noise_scale, &mut rng);
            let ys = responses_from_scores(&means, fpca, &scores)?;
            let config = BoostConfig {
                seed: boost.seed.wrapping_add(r as u64),
                ..*boost
            };
            let model = fit(&truth.spec, data, &ys, &config)?;
            let rel = rel_mse_clr(&prep.measure, &true_clr, &model.predict_clr(data)?)?;
            let effect_rel_mse = true_effects
                .iter()
                .enumerate()
                .map(|(j, e)| -> Result<Option<f64>> {
                    if e.iter().all(|v| v.abs() < 1e-12) {
                        return Ok(None);
                    }
                    Ok(Some(rel_mse_clr(&prep.measure, e, &model.effect_clr(j, data)?)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ReplicateResult {
                replicate: r,
                rel_mse: rel,
                effect_rel_mse,
                components: model.components.iter().map(|c| c.component).collect(),
                m_stop: model.components.iter().map(|c| c.m_stop).collect(),
                selection: model.components.iter().map(|c| c.selection.clone()).collect(),
                risk: model.components.iter().map(|c| c.risk.clone()).collect(),
            })
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn default_regions() -> usize {
    2
}
fn default_groups() -> usize {
    3
}
fn default_years() -> usize {
    30
}
fn default_grid() -> usize {
    100
}
fn default_noise() -> f64 {
    0.3
}

/// Synthetic panel of income-share-like densities on `[0, 1]` with point
/// masses at 0 and 1: regions × groups × years, one density per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    #[serde(default = "default_regions")]
    pub regions: usize,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default = "default_years")]
    pub years: usize,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    /// Scale of the smooth observation noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            regions: default_regions(),
            groups: default_groups(),
            years: default_years(),
            grid_size: default_grid(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

/// `[0, 1]` with unit point masses at both ends.
pub fn share_measure(grid_size: usize) -> Result<ReferenceMeasure> {
    ReferenceMeasure::mixed(0.0, 1.0, &[Atom::new(0.0, 1.0), Atom::new(1.0, 1.0)], grid_size)
}

/// The model the synthetic panel is generated from.
pub fn panel_spec() -> ModelSpec {
    ModelSpec::new(vec![
        TermSpec::new(TermKind::Intercept, &[]),
        TermSpec::new(TermKind::GroupIntercept, &["region"]),
        TermSpec::new(TermKind::GroupIntercept, &["group"]),
        TermSpec::new(TermKind::Flexible, &["year"]),
        TermSpec::new(TermKind::Interaction, &["region", "group"]),
    ])
}

/// Covariates and noisy densities of the synthetic panel.
pub fn synthetic_panel(cfg: &PanelConfig) -> Result<(DataTable, Vec<DensityElement>)> {
    if cfg.regions < 2 || cfg.groups < 2 || cfg.years < 4 {
        return Err(Error::InvalidConfig(
            "panel needs at least 2 regions, 2 groups and 4 years".into(),
        ));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::InvalidConfig("panel noise must be >= 0".into()));
    }
    let measure = Arc::new(share_measure(cfg.grid_size)?);
    let t = measure.locations();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut region, mut group, mut year, mut ys) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    // log-density pieces; atoms sit at t = 0 (index 0) and t = 1 (index 1)
    let base = |k: usize, x: f64| match k {
        0 => 0.4,
        1 => -1.2,
        _ => -(x - 0.45).powi(2) / 0.04,
    };
    for r in 0..cfg.regions {
        let rs = r as f64 / (cfg.regions - 1) as f64 - 0.5;
        for g in 0..cfg.groups {
            let gs = g as f64 / (cfg.groups - 1) as f64 - 0.5;
            for y in 0..cfg.years {
                let yr = y as f64 / (cfg.years - 1) as f64 - 0.5;
                let mut logs: Vec<f64> = (0..measure.len())
                    .map(|k| {
                        let x = t[k];
                        let (atom0, atom1) = (k == 0, k == 1);
                        let region_eff = if atom0 {
                            -0.8 * rs
                        } else if atom1 {
                            0.3 * rs
                        } else {
                            1.2 * rs * (x - 0.5)
                        };
                        let group_eff = if atom0 {
                            1.2 * gs
                        } else if atom1 {
                            -0.4 * gs
                        } else {
                            -1.5 * gs * (x - 0.5)
                        };
                        let year_eff = if atom0 {
                            -0.6 * yr
                        } else if atom1 {
                            0.0
                        } else {
                            0.8 * (2.0 * std::f64::consts::PI * yr).sin() * (x - 0.5)
                        };
                        let inter = if atom0 { 0.4 * rs * gs } else { 0.0 };
                        base(k, x) + region_eff + group_eff + year_eff + inter
                    })
                    .collect();
                if cfg.noise > 0.0 {
                    let z: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
                    for (k, v) in logs.iter_mut().enumerate() {
                        let e = match k {
                            0 => z[4],
                            1 => z[5],
                            _ => (1..=4)
                                .map(|h| z[h - 1] * (h as f64 * std::f64::consts::PI * t[k]).cos() / h as f64)
                                .sum(),
                        };
                        *v += cfg.noise * e;
                    }
                }
                ys.push(DensityElement::from_log_values(measure.clone(), &logs)?);
                region.push(format!("r{}", r + 1));
                group.push(format!("g{}", g + 1));
                year.push(2000.0 + y as f64);
            }
        }
    }
    let data = DataTable::new()
        .with_text("region", region)?
        .with_text("group", group)?
        .with_numeric("year", year)?;
    Ok((data, ys))
}

#[cfg(test)]
mod tests;
