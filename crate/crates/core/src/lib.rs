//! Density-on-scalar regression in Bayes Hilbert spaces.
//!
//! ```
//! use bayesboost::boosting::{BoostConfig, Stopping};
//! use bayesboost::model::fit;
//! use bayesboost::sim::{panel_spec, synthetic_panel, PanelConfig};
//!
//! let panel = PanelConfig { years: 6, grid_size: 20, ..Default::default() };
//! let (data, densities) = synthetic_panel(&panel)?;
//! let config = BoostConfig { max_iter: 50, stopping: Stopping::Fixed, ..Default::default() };
//! let model = fit(&panel_spec(), &data, &densities, &config)?;
//! let fitted = model.predict(&data)?;
//! assert_eq!(fitted.len(), densities.len());
//! let year = model.term_index("flexible(year)")?;
//! let effect = model.extract_effect(year, &data)?;
//! assert_eq!(effect.len(), data.n_rows());
//! # Ok::<(), bayesboost::Error>(())
//! ```

pub mod basis;
pub mod bayes;
pub mod boosting;
pub mod error;
pub mod ingest;
pub mod interpret;
mod matrix_serde;
pub mod measure;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
