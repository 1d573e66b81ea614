//! Run configuration, read from TOML. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bayesboost::boosting::BoostConfig;
use bayesboost::ingest::KdeConfig;
use bayesboost::measure::{MeasureSpec, ReferenceMeasure};
use bayesboost::model::{CovariateValue, ModelSpec};
use bayesboost::sim::{PanelConfig, SimulationConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub observations: Option<PathBuf>,
    pub densities: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
}

/// Column roles in an observation table.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationColumns {
    pub groups: Vec<String>,
    pub value: String,
    pub weight: Option<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OddsPair {
    pub t: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastConfig {
    pub covariate: String,
    pub treated: CovariateValue,
    pub control: CovariateValue,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidConfig {
    pub a: ContrastConfig,
    pub b: ContrastConfig,
    /// Values of the remaining covariates; unset ones take their reference.
    #[serde(default)]
    pub at: BTreeMap<String, CovariateValue>,
}

fn default_resolution() -> usize {
    50
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpretConfig {
    /// Term names to report; all terms when absent.
    pub terms: Option<Vec<String>>,
    #[serde(default)]
    pub odds: Vec<OddsPair>,
    pub did: Option<DidConfig>,
    /// Grid points kept in heatmaps.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub svg: bool,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            terms: None,
            odds: Vec::new(),
            did: None,
            resolution: default_resolution(),
            svg: false,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; overrides the seeds of the individual sections.
    pub seed: Option<u64>,
    #[serde(default)]
    pub input: InputConfig,
    pub measure: Option<MeasureSpec>,
    pub observations: Option<ObservationColumns>,
    #[serde(default)]
    pub kde: KdeConfig,
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub boosting: BoostConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub panel: Option<PanelConfig>,
    #[serde(default)]
    pub interpret: InterpretConfig,
}

impl RunConfig {
    /// Parses and validates; relative input paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for p in [
            &mut cfg.input.observations,
            &mut cfg.input.densities,
            &mut cfg.input.model,
            &mut cfg.input.covariates,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    fn validate(&self) -> CliResult<()> {
        let field = |name: &str, e: bayesboost::Error| CliError::Config(format!("[{name}] {e}"));
        self.boosting.validate().map_err(|e| field("boosting", e))?;
        self.kde.validate().map_err(|e| field("kde", e))?;
        self.simulation.validate().map_err(|e| field("simulation", e))?;
        if let Some(m) = &self.model {
            m.validate().map_err(|e| field("model", e))?;
        }
        if let Some(m) = &self.measure {
            ReferenceMeasure::from_spec(m).map_err(|e| field("measure", e))?;
        }
        if self.interpret.resolution == 0 {
            return Err(CliError::Config("[interpret] resolution must be positive".into()));
        }
        if let Some(obs) = &self.observations {
            if obs.groups.is_empty() {
                return Err(CliError::Config("[observations] groups must not be empty".into()));
            }
        }
        Ok(())
    }

    /// Applies a master seed to every seeded section.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.boosting.seed = s;
            self.simulation.seed = s;
            if let Some(p) = &mut self.panel {
                p.seed = s;
            }
        }
    }

    pub fn require<'a, T>(value: &'a Option<T>, name: &str) -> CliResult<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("missing `{name}` in config")))
    }
}
