use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{BoostConfig, Booster, ClrResponses, Stopping};
use crate::basis::EffectDesign;
use crate::error::{Error, Result};

/// Resampling outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStop {
    pub m_stop: usize,
    /// Mean out-of-sample risk after `1..=max_iter` iterations.
    pub risk: Vec<f64>,
    /// Per-replicate curves; `None` for replicates without held-out observations.
    pub replicates: Vec<Option<Vec<f64>>>,
}

/// In-bag observation weights for every replicate: 0/1 fold membership for
/// cross-validation, draw counts for the bootstrap.
pub fn resampling_weights(n_obs: usize, stopping: Stopping, seed: u64) -> Result<Vec<Vec<f64>>> {
    match stopping {
        Stopping::Fixed => Err(Error::InvalidConfig(
            "fixed stopping has no resampling scheme".into(),
        )),
        Stopping::Kfold { folds } => {
            if folds < 2 || folds > n_obs {
                return Err(Error::InvalidConfig(format!(
                    "{folds} folds for {n_obs} observations"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..n_obs).collect();
            order.shuffle(&mut rng);
            let mut fold_of = vec![0; n_obs];
            for (pos, &i) in order.iter().enumerate() {
                fold_of[i] = pos % folds;
            }
            Ok((0..folds)
                .map(|f| fold_of.iter().map(|&g| if g == f { 0.0 } else { 1.0 }).collect())
                .collect())
        }
        Stopping::Bootstrap { replicates } => Ok((0..replicates)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64 + 1);
                let mut counts = vec![0.0; n_obs];
                for _ in 0..n_obs {
                    counts[rng.random_range(0..n_obs)] += 1.0;
                }
                counts
            })
            .collect()),
    }
}

/// Chooses `m_stop` by minimizing the mean out-of-sample risk over
/// `1..=max_iter`. Each replicate's risk is the mean `‖y_i ⊖ ŷ_i‖²` over its
/// held-out observations; replicate curves are then averaged.
pub fn early_stop(
    responses: &ClrResponses,
    designs: &[EffectDesign],
    config: &BoostConfig,
) -> Result<EarlyStop> {
    config.validate()?;
    let weights = resampling_weights(responses.n_obs(), config.stopping, config.seed)?;
    let replicates: Vec<Option<Vec<f64>>> = weights
        .into_par_iter()
        .map(|w| -> Result<Option<Vec<f64>>> {
            let held_out: Vec<usize> = (0..w.len()).filter(|&i| w[i] == 0.0).collect();
            if held_out.is_empty() {
                return Ok(None);
            }
            let mut booster = Booster::weighted(responses, designs, config.step, w, false)?;
            let mut curve = Vec::with_capacity(config.max_iter);
            for _ in 0..config.max_iter {
                booster.step()?;
                let r = booster.observation_risk();
                curve.push(held_out.iter().map(|&i| r[i]).sum::<f64>() / held_out.len() as f64);
            }
            Ok(Some(curve))
        })
        .collect::<Result<_>>()?;

    let used: Vec<&Vec<f64>> = replicates.iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::Numeric("no replicate has held-out observations".into()));
    }
    let risk: Vec<f64> = (0..config.max_iter)
        .map(|m| used.iter().map(|c| c[m]).sum::<f64>() / used.len() as f64)
        .collect();
    let mut m_stop = 1;
    for (m, &r) in risk.iter().enumerate() {
        if r < risk[m_stop - 1] {
            m_stop = m + 1;
        }
    }
    Ok(EarlyStop {
        m_stop,
        risk,
        replicates,
    })
}
