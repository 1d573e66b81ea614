use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::data::{CovariateValue, DataTable};
use super::design::{build_terms, evaluate_terms, TermFit};
use super::spec::{Coding, ModelSpec};
use crate::basis::{assemble_effect, DensityBasis, DensityBasisSpec, EffectDesign};
use crate::bayes::{same_measure, ClrElement, DensityElement, MixedSplit};
use crate::boosting::{boost, combine_rows, decompose_responses, BoostConfig, ClrResponses, FitState};
use crate::error::{Error, Result};
use crate::measure::{MeasureKind, MeasureSpec, ReferenceMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// The whole measure (purely discrete or continuous).
    Full,
    Continuous,
    Discrete,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Full => "full",
            Component::Continuous => "continuous",
            Component::Discrete => "discrete",
        }
    }
}

/// Boosting result for one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentFit {
    pub component: Component,
    pub offset: Vec<f64>,
    #[serde(with = "crate::matrix_serde::list")]
    pub coefficients: Vec<DMatrix<f64>>,
    pub m_stop: usize,
    pub selection: Vec<usize>,
    /// In-bag risk after 0..=m_stop iterations.
    pub risk: Vec<f64>,
    /// Mean out-of-sample risk after 1..=max_iter iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resampling_risk: Option<Vec<f64>>,
}

impl ComponentFit {
    fn from_state(component: Component, state: &FitState) -> Self {
        Self {
            component,
            offset: state.offset.clone(),
            coefficients: state.coefficients.clone(),
            m_stop: state.iteration,
            selection: state.selection.clone(),
            risk: state.risk.clone(),
            resampling_risk: state.stopping.as_ref().map(|s| s.risk.clone()),
        }
    }

    pub fn selection_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.coefficients.len()];
        for &j in &self.selection {
            c[j] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub measure: MeasureSpec,
    pub config: BoostConfig,
    pub references: BTreeMap<String, CovariateValue>,
    pub terms: Vec<TermFit>,
    pub components: Vec<ComponentFit>,
}

/// Reference measure and density bases rebuilt from a fitted model.
pub struct Prepared {
    pub measure: Arc<ReferenceMeasure>,
    pub split: Option<MixedSplit>,
    /// One per component, in the order of [`FittedModel::components`].
    pub bases: Vec<DensityBasis>,
}

fn basis_spec(spec: &ModelSpec, kind: MeasureKind) -> DensityBasisSpec {
    match kind {
        MeasureKind::Discrete => spec.discrete_basis,
        _ => spec.continuous_basis,
    }
}

fn effect_designs(
    spec: &ModelSpec,
    terms: &[TermFit],
    covariates: &[DMatrix<f64>],
    basis: &DensityBasis,
) -> Result<Vec<EffectDesign>> {
    terms
        .iter()
        .zip(covariates)
        .zip(&spec.terms)
        .map(|((t, x), ts)| {
            assemble_effect(
                t.name.clone(),
                x.clone(),
                t.penalty.clone(),
                basis,
                !ts.isotropic,
                t.lambda,
                ts.density_lambda,
            )
        })
        .collect()
}

/// Fits the model; also returns the raw boosting states per component.
pub fn fit_detailed(
    spec: &ModelSpec,
    data: &DataTable,
    responses: &[DensityElement],
    config: &BoostConfig,
) -> Result<(FittedModel, Vec<FitState>)> {
    config.validate()?;
    if data.n_rows() != responses.len() {
        return Err(Error::Data(format!(
            "{} covariate rows for {} responses",
            data.n_rows(),
            responses.len()
        )));
    }
    let first = responses
        .first()
        .ok_or_else(|| Error::Data("no responses".into()))?;
    let measure = first.measure().clone();
    if responses.iter().any(|y| !same_measure(&measure, y.measure())) {
        return Err(Error::MeasureMismatch);
    }
    let (terms, covariates) = build_terms(spec, data, config.df)?;

    let mut references = BTreeMap::new();
    for t in &spec.terms {
        for c in &t.covariates {
            if !references.contains_key(c) {
                let v = match spec.references.get(c) {
                    Some(v) => v.clone(),
                    None => data.default_reference(c)?,
                };
                references.insert(c.clone(), v);
            }
        }
    }

    let mut components = Vec::new();
    let mut states = Vec::new();
    if measure.kind() == MeasureKind::Mixed {
        let (split, cont, disc) = decompose_responses(responses)?;
        for (component, data_c, measure_c) in [
            (Component::Continuous, &cont, split.continuous()),
            (Component::Discrete, &disc, split.discrete()),
        ] {
            let basis = DensityBasis::build(measure_c, &basis_spec(spec, measure_c.kind()))?;
            let designs = effect_designs(spec, &terms, &covariates, &basis)?;
            let state = boost(data_c, &designs, config)?;
            components.push(ComponentFit::from_state(component, &state));
            states.push(state);
        }
    } else {
        let basis = DensityBasis::build(&measure, &basis_spec(spec, measure.kind()))?;
        let designs = effect_designs(spec, &terms, &covariates, &basis)?;
        let state = boost(&ClrResponses::from_densities(responses)?, &designs, config)?;
        components.push(ComponentFit::from_state(Component::Full, &state));
        states.push(state);
    }
    let model = FittedModel {
        spec: spec.clone(),
        measure: measure.spec(),
        config: *config,
        references,
        terms,
        components,
    };
    Ok((model, states))
}

pub fn fit(
    spec: &ModelSpec,
    data: &DataTable,
    responses: &[DensityElement],
    config: &BoostConfig,
) -> Result<FittedModel> {
    fit_detailed(spec, data, responses, config).map(|(m, _)| m)
}

impl FittedModel {
    pub fn prepare(&self) -> Result<Prepared> {
        let measure = Arc::new(ReferenceMeasure::from_spec(&self.measure)?);
        if measure.kind() == MeasureKind::Mixed {
            let split = MixedSplit::new(measure.clone())?;
            let bases = vec![
                DensityBasis::build(split.continuous(), &basis_spec(&self.spec, MeasureKind::Continuous))?,
                DensityBasis::build(split.discrete(), &basis_spec(&self.spec, MeasureKind::Discrete))?,
            ];
            Ok(Prepared {
                measure,
                split: Some(split),
                bases,
            })
        } else {
            let bases = vec![DensityBasis::build(&measure, &basis_spec(&self.spec, measure.kind()))?];
            Ok(Prepared {
                measure,
                split: None,
                bases,
            })
        }
    }

    pub fn term_index(&self, name: &str) -> Result<usize> {
        self.terms
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no term named `{name}`")))
    }

    /// Whether a term was selected in any component.
    pub fn is_selected(&self, term: usize) -> bool {
        self.components.iter().any(|c| c.selection.contains(&term))
    }

    /// Full-measure clr rows from per-component rows.
    fn combine(&self, prep: &Prepared, parts: Vec<DMatrix<f64>>) -> DMatrix<f64> {
        match &prep.split {
            Some(split) => combine_rows(split, &parts[0], &parts[1]),
            None => parts.into_iter().next().expect("one component"),
        }
    }

    /// Effect-coded clr contributions of each term for the rows of `data`.
    fn term_parts(&self, prep: &Prepared, data: &DataTable) -> Result<Vec<DMatrix<f64>>> {
        let x = evaluate_terms(&self.terms, data)?;
        Ok((0..self.terms.len())
            .map(|j| {
                let parts = self
                    .components
                    .iter()
                    .zip(&prep.bases)
                    .map(|(c, b)| &x[j] * &c.coefficients[j] * b.basis.transpose())
                    .collect();
                self.combine(prep, parts)
            })
            .collect())
    }

    fn offset_clr(&self, prep: &Prepared) -> Vec<f64> {
        let parts: Vec<DMatrix<f64>> = self
            .components
            .iter()
            .map(|c| DMatrix::from_row_slice(1, c.offset.len(), &c.offset))
            .collect();
        self.combine(prep, parts).row(0).iter().copied().collect()
    }

    /// Predicted clr values, one row per row of `data`.
    pub fn predict_clr(&self, data: &DataTable) -> Result<DMatrix<f64>> {
        let prep = self.prepare()?;
        let offset = self.offset_clr(&prep);
        let mut out = DMatrix::from_fn(data.n_rows(), offset.len(), |_, t| offset[t]);
        for part in self.term_parts(&prep, data)? {
            out += part;
        }
        Ok(out)
    }

    /// Predicted probability densities.
    pub fn predict(&self, data: &DataTable) -> Result<Vec<DensityElement>> {
        let prep = self.prepare()?;
        rows_to_densities(&prep.measure, &self.predict_clr(data)?)
    }

    pub fn offset(&self) -> Result<DensityElement> {
        let prep = self.prepare()?;
        let z = self.offset_clr(&prep);
        DensityElement::from_log_values(prep.measure.clone(), &z)
    }

    /// clr values of one term for the rows of `data`, in the model's coding.
    ///
    /// Under reference coding the term on covariates `S` reports the anchored
    /// component `Σ_{T⊆S} (−1)^{|S∖T|} η(x_T, ref)`, where `η` is the
    /// predictor without offset, so reference rows get zero effects and the
    /// components add up to `η`.
    pub fn effect_clr(&self, term: usize, data: &DataTable) -> Result<DMatrix<f64>> {
        if term >= self.terms.len() {
            return Err(Error::InvalidArgument(format!("term index {term} out of range")));
        }
        let prep = self.prepare()?;
        match self.spec.coding {
            Coding::Effect => Ok(self.term_parts(&prep, data)?.swap_remove(term)),
            Coding::Reference => self.anchored_clr(&prep, term, data),
        }
    }

    fn anchored_clr(&self, prep: &Prepared, term: usize, data: &DataTable) -> Result<DMatrix<f64>> {
        let s: Vec<&str> = self.terms[term].covariate_set().into_iter().collect();
        let s_set: BTreeSet<&str> = s.iter().copied().collect();
        let uppers: Vec<usize> = (0..self.terms.len())
            .filter(|&u| s_set.is_subset(&self.terms[u].covariate_set()))
            .collect();
        let involved: BTreeSet<&str> = uppers
            .iter()
            .flat_map(|&u| self.terms[u].covariates.iter().map(String::as_str))
            .collect();
        let n = prep.measure.len();
        let mut out = DMatrix::zeros(data.n_rows(), n);
        for mask in 0..(1u32 << s.len()) {
            let keep: BTreeSet<&str> = s
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, v)| *v)
                .collect();
            let sign = if (s.len() - keep.len()) % 2 == 0 { 1.0 } else { -1.0 };
            let mut table = data.clone();
            for c in involved.iter().filter(|c| !keep.contains(*c)) {
                table = table.with_constant(c, &self.references[*c])?;
            }
            let parts = self.term_parts(prep, &table)?;
            for &u in &uppers {
                out += &parts[u] * sign;
            }
        }
        Ok(out)
    }

    /// Density and clr views of a term's effect for the rows of `data`.
    pub fn extract_effect(
        &self,
        term: usize,
        data: &DataTable,
    ) -> Result<Vec<(DensityElement, ClrElement)>> {
        let z = self.effect_clr(term, data)?;
        let measure = Arc::new(ReferenceMeasure::from_spec(&self.measure)?);
        z.row_iter()
            .map(|row| {
                let v: Vec<f64> = row.iter().copied().collect();
                let clr = ClrElement::centered(measure.clone(), v)?;
                Ok((clr.to_density(), clr))
            })
            .collect()
    }
}

pub fn rows_to_densities(
    measure: &Arc<ReferenceMeasure>,
    rows: &DMatrix<f64>,
) -> Result<Vec<DensityElement>> {
    rows.row_iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().copied().collect();
            DensityElement::from_log_values(measure.clone(), &v)
        })
        .collect()
}
