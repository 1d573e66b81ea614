//! Component-wise L2 boosting for density responses.
//!
//! All arithmetic runs in clr coordinates with measure-weighted inner
//! products. [`bayes_path`] carries an independent implementation written
//! with Bayes-space operations on densities, used to cross-check this one.

pub mod bayes_path;
mod engine;
mod mixed;
mod stopping;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::EffectDesign;
use crate::bayes::{same_measure, DensityElement};
use crate::error::{Error, Result};
use crate::measure::ReferenceMeasure;

pub use engine::Booster;
pub use mixed::{boost_mixed, combine_rows, decompose_responses, MixedFit};
pub use stopping::{early_stop, resampling_weights, EarlyStop};

/// How the number of boosting iterations is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stopping {
    /// Run exactly `max_iter` iterations.
    Fixed,
    /// k-fold cross-validation.
    Kfold { folds: usize },
    /// Out-of-bag risk over bootstrap replicates.
    Bootstrap { replicates: usize },
}

impl Default for Stopping {
    fn default() -> Self {
        Stopping::Bootstrap { replicates: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostConfig {
    /// Step length κ.
    pub step: f64,
    pub max_iter: usize,
    pub stopping: Stopping,
    /// Target degrees of freedom for effects that do not set their own.
    pub df: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            max_iter: 1000,
            stopping: Stopping::default(),
            df: 2.0,
            seed: 1,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "step length must lie in (0, 1), got {}",
                self.step
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.df > 0.0 && self.df.is_finite()) {
            return Err(Error::InvalidConfig(format!("df must be positive, got {}", self.df)));
        }
        match self.stopping {
            Stopping::Kfold { folds } if folds < 2 => Err(Error::InvalidConfig(
                "cross-validation needs at least 2 folds".into(),
            )),
            Stopping::Bootstrap { replicates } if replicates == 0 => Err(Error::InvalidConfig(
                "bootstrap needs at least 1 replicate".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Responses in clr coordinates, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrResponses {
    measure: Arc<ReferenceMeasure>,
    values: DMatrix<f64>,
}

impl ClrResponses {
    pub fn from_densities(responses: &[DensityElement]) -> Result<Self> {
        let first = responses
            .first()
            .ok_or_else(|| Error::Data("no responses".into()))?;
        let measure = first.measure().clone();
        let n = measure.len();
        let mut values = DMatrix::zeros(responses.len(), n);
        for (i, y) in responses.iter().enumerate() {
            if !same_measure(&measure, y.measure()) {
                return Err(Error::MeasureMismatch);
            }
            for (t, v) in y.clr().values().iter().enumerate() {
                values[(i, t)] = *v;
            }
        }
        Ok(Self { measure, values })
    }

    /// Rows must already integrate to zero.
    pub fn from_clr_rows(measure: Arc<ReferenceMeasure>, values: DMatrix<f64>) -> Result<Self> {
        measure.check_len(values.ncols())?;
        if values.nrows() == 0 {
            return Err(Error::Data("no responses".into()));
        }
        Ok(Self { measure, values })
    }

    pub fn measure(&self) -> &Arc<ReferenceMeasure> {
        &self.measure
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    /// Weighted mean clr row; unit weights when `weights` is `None`.
    pub fn mean(&self, weights: Option<&[f64]>) -> Vec<f64> {
        let n = self.values.ncols();
        let mut out = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..self.n_obs() {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            total += w;
            for (t, slot) in out.iter_mut().enumerate() {
                *slot += w * self.values[(i, t)];
            }
        }
        out.iter_mut().for_each(|v| *v /= total);
        out
    }
}

/// Result of a boosting run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    /// clr image of the offset.
    pub offset: Vec<f64>,
    /// `K_j × K_Y` coefficient matrix per effect.
    pub coefficients: Vec<DMatrix<f64>>,
    pub iteration: usize,
    /// Index of the selected effect at each iteration.
    pub selection: Vec<usize>,
    /// In-bag risk `Σ ‖y_i ⊖ ŷ_i‖²` after 0, 1, …, `iteration` updates.
    pub risk: Vec<f64>,
    /// Fitted clr values, one row per observation.
    pub fitted: DMatrix<f64>,
    pub stopping: Option<EarlyStop>,
}

impl FitState {
    pub fn selection_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.coefficients.len()];
        for &j in &self.selection {
            counts[j] += 1;
        }
        counts
    }

    pub fn is_selected(&self, effect: usize) -> bool {
        self.selection.contains(&effect)
    }

    /// clr contribution `X Θ_j Bᵀ` of one effect for given covariate rows.
    pub fn effect_clr(
        &self,
        effect: usize,
        covariate: &DMatrix<f64>,
        density: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        covariate * &self.coefficients[effect] * density.transpose()
    }
}

/// Bayes-space mean of the responses.
pub fn offset(responses: &[DensityElement]) -> Result<DensityElement> {
    let data = ClrResponses::from_densities(responses)?;
    DensityElement::from_log_values(data.measure.clone(), &data.mean(None))
}

/// `2 ⊙ (y ⊖ ĥ)`.
pub fn negative_gradient(y: &DensityElement, h: &DensityElement) -> Result<DensityElement> {
    y.difference(h)?.power(2.0)
}

/// Penalized least-squares fit of one effect to clr gradients `U`
/// (`N × n`), returning the `K_j × K_Y` coefficient matrix.
pub fn fit_base_learner(design: &EffectDesign, gradients: &ClrResponses) -> Result<DMatrix<f64>> {
    check_design(design, gradients)?;
    let w = DVector::from_column_slice(gradients.measure.weights());
    let wb = DMatrix::from_fn(design.density.nrows(), design.density.ncols(), |t, m| {
        w[t] * design.density[(t, m)]
    });
    let gram_y = design.density.transpose() * &wb;
    let xtx = design.covariate.transpose() * &design.covariate;
    let rhs = design.covariate.transpose() * gradients.values() * &wb;
    let system = xtx.kronecker(&gram_y) + design.penalty();
    let chol = nalgebra::Cholesky::new(system)
        .ok_or_else(|| Error::Singular(format!("base learner `{}`", design.name)))?;
    let b = DVector::from_column_slice(rhs.transpose().as_slice());
    let sol = chol.solve(&b);
    Ok(DMatrix::from_row_slice(
        design.n_covariate(),
        design.n_density(),
        sol.as_slice(),
    ))
}

/// `Σ_i ‖U_i ⊖ ĥ_j(x_i)‖²`, evaluated directly on the support.
pub fn base_learner_loss(
    design: &EffectDesign,
    gamma: &DMatrix<f64>,
    gradients: &ClrResponses,
) -> Result<f64> {
    check_design(design, gradients)?;
    let fit = design.evaluate(gamma);
    let diff = gradients.values() - fit;
    let w = gradients.measure.weights();
    Ok(diff
        .row_iter()
        .map(|row| row.iter().zip(w).map(|(d, w)| w * d * d).sum::<f64>())
        .sum())
}

/// Smallest loss wins; ties go to the lowest index. Non-finite losses never win.
pub fn select_base_learner(losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &loss) in losses.iter().enumerate() {
        if !loss.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| loss < b) {
            best = Some((j, loss));
        }
    }
    best.map(|(j, _)| j)
}

fn check_design(design: &EffectDesign, data: &ClrResponses) -> Result<()> {
    if design.covariate.nrows() != data.n_obs() {
        return Err(Error::LengthMismatch {
            expected: data.n_obs(),
            got: design.covariate.nrows(),
        });
    }
    data.measure.check_len(design.density.nrows())
}

/// Fits with the configured stopping rule: resampling picks `m_stop` first,
/// then the full data are boosted for `m_stop` iterations.
pub fn boost(
    responses: &ClrResponses,
    designs: &[EffectDesign],
    config: &BoostConfig,
) -> Result<FitState> {
    config.validate()?;
    let (iterations, stopping) = match config.stopping {
        Stopping::Fixed => (config.max_iter, None),
        _ => {
            let es = early_stop(responses, designs, config)?;
            (es.m_stop, Some(es))
        }
    };
    let mut booster = Booster::new(responses, designs, config.step)?;
    booster.run(iterations)?;
    let mut state = booster.into_state();
    state.stopping = stopping;
    Ok(state)
}

/// [`boost`] on densities.
pub fn boost_densities(
    responses: &[DensityElement],
    designs: &[EffectDesign],
    config: &BoostConfig,
) -> Result<FitState> {
    boost(&ClrResponses::from_densities(responses)?, designs, config)
}
