use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{check_design, ClrResponses, FitState};
use crate::basis::EffectDesign;
use crate::error::{Error, Result};

const JITTER: f64 = 1e-10;

static WARNED: AtomicBool = AtomicBool::new(false);

struct Learner {
    /// `Xᵀ V`
    xtv: DMatrix<f64>,
    /// `Xᵀ V X`
    xtvx: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
}

/// Step-by-step boosting loop in clr coordinates.
///
/// Residuals are tracked through their projections `E W B` onto the density
/// basis and their squared norms, so an iteration costs
/// `O(N K_j K_Y + N K_Y²)` regardless of the support size. Full fitted
/// surfaces are maintained only when requested.
pub struct Booster<'a> {
    designs: &'a [EffectDesign],
    targets: &'a DMatrix<f64>,
    quad: Vec<f64>,
    gram_y: DMatrix<f64>,
    obs: Vec<f64>,
    step: f64,
    learners: Vec<Learner>,
    offset: Vec<f64>,
    coefficients: Vec<DMatrix<f64>>,
    /// `E W B` with `E = Y − F`
    resid_proj: DMatrix<f64>,
    /// `‖E_i‖²` per observation
    resid_norm: Vec<f64>,
    fitted: Option<DMatrix<f64>>,
    selection: Vec<usize>,
    risk: Vec<f64>,
    warnings: Vec<String>,
}

impl<'a> Booster<'a> {
    /// Unit observation weights, fitted surfaces tracked.
    pub fn new(responses: &'a ClrResponses, designs: &'a [EffectDesign], step: f64) -> Result<Self> {
        Self::weighted(responses, designs, step, vec![1.0; responses.n_obs()], true)
    }

    /// Observation weights `v_i ≥ 0` enter the offset, the base-learner fits
    /// and the in-bag risk.
    pub fn weighted(
        responses: &'a ClrResponses,
        designs: &'a [EffectDesign],
        step: f64,
        obs: Vec<f64>,
        track_fitted: bool,
    ) -> Result<Self> {
        if designs.is_empty() {
            return Err(Error::InvalidArgument("no effects to boost".into()));
        }
        if !(step > 0.0 && step < 1.0) {
            return Err(Error::InvalidConfig(format!("step length {step} outside (0, 1)")));
        }
        let n_obs = responses.n_obs();
        if obs.len() != n_obs {
            return Err(Error::LengthMismatch {
                expected: n_obs,
                got: obs.len(),
            });
        }
        if obs.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || obs.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidArgument("observation weights must be >= 0, not all zero".into()));
        }
        let basis = &designs[0].density;
        for d in designs {
            check_design(d, responses)?;
            if d.density != *basis {
                return Err(Error::InvalidArgument(
                    "all effects of one fit must share the density basis".into(),
                ));
            }
        }
        let quad = responses.measure().weights().to_vec();
        let wb = DMatrix::from_fn(basis.nrows(), basis.ncols(), |t, m| quad[t] * basis[(t, m)]);
        let gram_y = basis.transpose() * &wb;

        let mut warnings = Vec::new();
        let learners = designs
            .iter()
            .map(|d| {
                let mut xtv = d.covariate.transpose();
                for (i, mut col) in xtv.column_iter_mut().enumerate() {
                    col *= obs[i];
                }
                let xtvx = &xtv * &d.covariate;
                let system = xtvx.kronecker(&gram_y) + d.penalty();
                let chol = factor(system, &d.name, &mut warnings);
                Learner { xtv, xtvx, chol }
            })
            .collect();

        let targets = responses.values();
        let offset = responses.mean(Some(&obs));
        let mut resid = targets.clone();
        for mut row in resid.row_iter_mut() {
            for (v, o) in row.iter_mut().zip(&offset) {
                *v -= o;
            }
        }
        let resid_proj = &resid * &wb;
        let resid_norm: Vec<f64> = resid
            .row_iter()
            .map(|row| row.iter().zip(&quad).map(|(e, w)| w * e * e).sum())
            .collect();
        let fitted = track_fitted.then(|| {
            DMatrix::from_fn(n_obs, offset.len(), |_, t| offset[t])
        });
        let coefficients = designs
            .iter()
            .map(|d| DMatrix::zeros(d.n_covariate(), d.n_density()))
            .collect();
        let mut booster = Self {
            designs,
            targets,
            quad,
            gram_y,
            obs,
            step,
            learners,
            offset,
            coefficients,
            resid_proj,
            resid_norm,
            fitted,
            selection: Vec::new(),
            risk: Vec::new(),
            warnings,
        };
        let r0 = booster.current_risk();
        booster.risk.push(r0);
        Ok(booster)
    }

    fn current_risk(&self) -> f64 {
        match &self.fitted {
            Some(f) => (0..f.nrows())
                .filter(|&i| self.obs[i] != 0.0)
                .map(|i| {
                    let sq: f64 = (0..f.ncols())
                        .map(|t| {
                            let e = self.targets[(i, t)] - f[(i, t)];
                            self.quad[t] * e * e
                        })
                        .sum();
                    self.obs[i] * sq
                })
                .sum(),
            None => self
                .resid_norm
                .iter()
                .zip(&self.obs)
                .map(|(r, v)| v * r)
                .sum(),
        }
    }

    /// Base-learner coefficients fitted to the current negative gradient,
    /// with their losses `Σ v_i ‖U_i ⊖ fit_i‖²`. Skipped learners get `None`.
    pub fn candidates(&self) -> Vec<Option<(DMatrix<f64>, f64)>> {
        let grad_proj = &self.resid_proj * 2.0;
        let grad_sq: f64 = 4.0
            * self
                .resid_norm
                .iter()
                .zip(&self.obs)
                .map(|(r, v)| v * r)
                .sum::<f64>();
        self.learners
            .iter()
            .zip(self.designs)
            .map(|(learner, design)| {
                let chol = learner.chol.as_ref()?;
                let rhs = &learner.xtv * &grad_proj;
                let b = DVector::from_column_slice(rhs.transpose().as_slice());
                let sol = chol.solve(&b);
                let gamma =
                    DMatrix::from_row_slice(design.n_covariate(), design.n_density(), sol.as_slice());
                let cross = gamma.dot(&rhs);
                let quad = gamma.dot(&(&learner.xtvx * &gamma * &self.gram_y));
                Some((gamma, grad_sq - 2.0 * cross + quad))
            })
            .collect()
    }

    /// One boosting iteration; returns the selected effect.
    pub fn step(&mut self) -> Result<usize> {
        let candidates = self.candidates();
        let losses: Vec<f64> = candidates
            .iter()
            .map(|c| c.as_ref().map_or(f64::INFINITY, |(_, l)| *l))
            .collect();
        let j = super::select_base_learner(&losses)
            .ok_or_else(|| Error::Singular("every base learner is singular".into()))?;
        let gamma = candidates[j].as_ref().map(|(g, _)| g).expect("selected learner");
        let kappa = self.step;
        let design = &self.designs[j];

        self.coefficients[j] += gamma * kappa;
        let d = &design.covariate * gamma;
        let inc_proj = &d * &self.gram_y;
        for i in 0..d.nrows() {
            let cross = d.row(i).dot(&self.resid_proj.row(i));
            let sq = d.row(i).dot(&inc_proj.row(i));
            self.resid_norm[i] = (self.resid_norm[i] - 2.0 * kappa * cross + kappa * kappa * sq).max(0.0);
        }
        self.resid_proj -= inc_proj * kappa;
        if let Some(f) = self.fitted.as_mut() {
            *f += (&d * design.density.transpose()) * kappa;
        }
        self.selection.push(j);
        let r = self.current_risk();
        self.risk.push(r);
        Ok(j)
    }

    pub fn run(&mut self, iterations: usize) -> Result<()> {
        for _ in 0..iterations {
            self.step()?;
        }
        Ok(())
    }

    pub fn iteration(&self) -> usize {
        self.selection.len()
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coefficients
    }

    pub fn selection(&self) -> &[usize] {
        &self.selection
    }

    pub fn risk(&self) -> &[f64] {
        &self.risk
    }

    /// `‖y_i ⊖ ŷ_i‖²` for every observation, in-bag or not.
    pub fn observation_risk(&self) -> &[f64] {
        &self.resid_norm
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn into_state(self) -> FitState {
        let fitted = match self.fitted {
            Some(f) => f,
            None => {
                let n = self.offset.len();
                let mut f = DMatrix::from_fn(self.targets.nrows(), n, |_, t| self.offset[t]);
                for (d, theta) in self.designs.iter().zip(&self.coefficients) {
                    f += d.evaluate(theta);
                }
                f
            }
        };
        FitState {
            offset: self.offset,
            coefficients: self.coefficients,
            iteration: self.selection.len(),
            selection: self.selection,
            risk: self.risk,
            fitted,
            stopping: None,
        }
    }
}

/// Cholesky factor, retried once with a small ridge.
fn factor(system: DMatrix<f64>, name: &str, warnings: &mut Vec<String>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(system.clone()) {
        return Some(c);
    }
    let scale = system.diagonal().amax().max(1.0);
    let k = system.nrows();
    let jittered = system + DMatrix::<f64>::identity(k, k) * (JITTER * scale);
    let result = Cholesky::new(jittered);
    let msg = match result {
        Some(_) => format!("base learner `{name}` is singular; added ridge jitter"),
        None => format!("base learner `{name}` is singular; skipped"),
    };
    if !WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("{msg}");
    }
    warnings.push(msg);
    result
}
