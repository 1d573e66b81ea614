//! Model specification, design construction, fitting and prediction.

mod data;
mod design;
mod fit;
mod spec;

pub use data::{Column, CovariateValue, DataTable};
pub use design::{build_terms, evaluate_terms, row_tensor, Factor, TermFit};
pub use fit::{fit, fit_detailed, rows_to_densities, Component, ComponentFit, FittedModel, Prepared};
pub use spec::{Coding, ModelSpec, TermKind, TermSpec};
