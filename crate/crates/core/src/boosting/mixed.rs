use nalgebra::DMatrix;

use super::{boost, BoostConfig, ClrResponses, FitState};
use crate::basis::EffectDesign;
use crate::bayes::{same_measure, DensityElement, MixedSplit};
use crate::error::{Error, Result};

/// Separate fits of the continuous and discrete components of mixed responses.
#[derive(Debug, Clone)]
pub struct MixedFit {
    pub split: MixedSplit,
    pub continuous: FitState,
    pub discrete: FitState,
}

impl MixedFit {
    /// clr of `ι_c(ŷ_c) ⊕ ι_d(ŷ_d)` per observation.
    pub fn fitted_clr(&self) -> DMatrix<f64> {
        combine_rows(&self.split, &self.continuous.fitted, &self.discrete.fitted)
    }
}

/// Combines component clr rows into full-measure clr rows.
pub fn combine_rows(split: &MixedSplit, zc: &DMatrix<f64>, zd: &DMatrix<f64>) -> DMatrix<f64> {
    let n = split.full().len();
    let mut out = DMatrix::zeros(zc.nrows(), n);
    let mut row = vec![0.0; n];
    for i in 0..zc.nrows() {
        let c: Vec<f64> = zc.row(i).iter().copied().collect();
        let d: Vec<f64> = zd.row(i).iter().copied().collect();
        split.combine_clr_values(&c, &d, &mut row);
        for (t, v) in row.iter().enumerate() {
            out[(i, t)] = *v;
        }
    }
    out
}

/// Splits mixed responses into component clr samples.
pub fn decompose_responses(
    responses: &[DensityElement],
) -> Result<(MixedSplit, ClrResponses, ClrResponses)> {
    let first = responses
        .first()
        .ok_or_else(|| Error::Data("no responses".into()))?;
    let split = MixedSplit::new(first.measure().clone())?;
    let mut cont = Vec::with_capacity(responses.len());
    let mut disc = Vec::with_capacity(responses.len());
    for y in responses {
        if !same_measure(split.full(), y.measure()) {
            return Err(Error::MeasureMismatch);
        }
        let (fc, fd) = split.decompose(y)?;
        cont.push(fc);
        disc.push(fd);
    }
    Ok((
        split,
        ClrResponses::from_densities(&cont)?,
        ClrResponses::from_densities(&disc)?,
    ))
}

/// Boosts both components independently, each with its own stopping iteration.
pub fn boost_mixed(
    responses: &[DensityElement],
    continuous_designs: &[EffectDesign],
    discrete_designs: &[EffectDesign],
    config: &BoostConfig,
) -> Result<MixedFit> {
    let (split, cont, disc) = decompose_responses(responses)?;
    let continuous = boost(&cont, continuous_designs, config)?;
    let discrete = boost(&disc, discrete_designs, config)?;
    Ok(MixedFit {
        split,
        continuous,
        discrete,
    })
}
