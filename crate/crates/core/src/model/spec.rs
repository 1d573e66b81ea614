use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::data::CovariateValue;
use crate::basis::DensityBasisSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    /// `β₀`
    Intercept,
    /// `x β`
    Linear,
    /// `g(x)`
    Flexible,
    /// `β_g`
    GroupIntercept,
    /// `x β_g`, covariates `[group, x]`
    GroupLinear,
    /// `g_g(x)`, covariates `[group, x]`
    GroupFlexible,
    /// `z g(x)`, covariates `[z, x]`
    VaryingCoefficient,
    /// Tensor product over two or more covariates: text columns enter as
    /// groups, numeric columns as splines.
    Interaction,
}

impl TermKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::Intercept => "intercept",
            TermKind::Linear => "linear",
            TermKind::Flexible => "flexible",
            TermKind::GroupIntercept => "group_intercept",
            TermKind::GroupLinear => "group_linear",
            TermKind::GroupFlexible => "group_flexible",
            TermKind::VaryingCoefficient => "varying_coefficient",
            TermKind::Interaction => "interaction",
        }
    }

    fn arity(self) -> Option<usize> {
        match self {
            TermKind::Intercept => Some(0),
            TermKind::Linear | TermKind::Flexible | TermKind::GroupIntercept => Some(1),
            TermKind::GroupLinear | TermKind::GroupFlexible | TermKind::VaryingCoefficient => Some(2),
            TermKind::Interaction => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub kind: TermKind,
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Target degrees of freedom in covariate direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    /// Interior knots of spline factors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_order: Option<usize>,
    /// Smoothing parameter in density direction.
    #[serde(default)]
    pub density_lambda: f64,
    /// Use one smoothing parameter for both directions.
    #[serde(default)]
    pub isotropic: bool,
}

impl TermSpec {
    pub fn new(kind: TermKind, covariates: &[&str]) -> Self {
        Self {
            kind,
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            name: None,
            df: None,
            knots: None,
            degree: None,
            penalty_order: None,
            density_lambda: 0.0,
            isotropic: false,
        }
    }

    pub fn with_df(mut self, df: f64) -> Self {
        self.df = Some(df);
        self
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn display_name(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None if self.covariates.is_empty() => self.kind.as_str().to_string(),
            None => format!("{}({})", self.kind.as_str(), self.covariates.join(",")),
        }
    }

    pub fn covariate_set(&self) -> BTreeSet<&str> {
        self.covariates.iter().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coding {
    /// Effects centered over the observations.
    #[default]
    Effect,
    /// Effects anchored at reference covariate values.
    Reference,
}

fn default_continuous() -> DensityBasisSpec {
    DensityBasisSpec::cubic_default()
}

fn default_discrete() -> DensityBasisSpec {
    DensityBasisSpec::indicator_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub terms: Vec<TermSpec>,
    #[serde(default)]
    pub coding: Coding,
    /// Reference values for reference coding; defaults are the smallest value
    /// of numeric covariates and the first sorted level otherwise.
    #[serde(default)]
    pub references: BTreeMap<String, CovariateValue>,
    #[serde(default = "default_continuous")]
    pub continuous_basis: DensityBasisSpec,
    #[serde(default = "default_discrete")]
    pub discrete_basis: DensityBasisSpec,
}

impl ModelSpec {
    pub fn new(terms: Vec<TermSpec>) -> Self {
        Self {
            terms,
            coding: Coding::Effect,
            references: BTreeMap::new(),
            continuous_basis: default_continuous(),
            discrete_basis: default_discrete(),
        }
    }

    pub fn with_coding(mut self, coding: Coding) -> Self {
        self.coding = coding;
        self
    }

    pub fn has_intercept(&self) -> bool {
        self.terms.iter().any(|t| t.kind == TermKind::Intercept)
    }

    /// Structural checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidConfig("model has no terms".into()));
        }
        if self.terms.iter().filter(|t| t.kind == TermKind::Intercept).count() > 1 {
            return Err(Error::InvalidConfig("at most one intercept".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.terms {
            let n = t.covariates.len();
            match t.kind.arity() {
                Some(k) if k != n => {
                    return Err(Error::InvalidConfig(format!(
                        "{} term needs {k} covariate(s), got {n}",
                        t.kind.as_str()
                    )))
                }
                None if n < 2 => {
                    return Err(Error::InvalidConfig(
                        "interaction needs at least two covariates".into(),
                    ))
                }
                _ => {}
            }
            if t.covariate_set().len() != n {
                return Err(Error::InvalidConfig(format!(
                    "term `{}` repeats a covariate",
                    t.display_name()
                )));
            }
            if let Some(df) = t.df {
                if !(df > 0.0 && df.is_finite()) {
                    return Err(Error::InvalidConfig(format!("df must be positive, got {df}")));
                }
            }
            if !(t.density_lambda >= 0.0 && t.density_lambda.is_finite()) {
                return Err(Error::InvalidConfig("density_lambda must be >= 0".into()));
            }
            if !names.insert(t.display_name()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate term name `{}`",
                    t.display_name()
                )));
            }
        }
        if self.coding == Coding::Reference {
            self.check_hierarchy()?;
        }
        Ok(())
    }

    /// Reference coding decomposes the predictor over covariate subsets, so
    /// every subset of a term's covariates must itself be a term.
    fn check_hierarchy(&self) -> Result<()> {
        if !self.has_intercept() {
            return Err(Error::InvalidConfig(
                "reference coding needs an intercept".into(),
            ));
        }
        let sets: Vec<BTreeSet<&str>> = self.terms.iter().map(TermSpec::covariate_set).collect();
        for (i, s) in sets.iter().enumerate() {
            if sets[..i].contains(s) {
                return Err(Error::InvalidConfig(format!(
                    "reference coding: two terms share covariates {{{}}}",
                    s.iter().copied().collect::<Vec<_>>().join(",")
                )));
            }
            let items: Vec<&str> = s.iter().copied().collect();
            for mask in 1..(1u32 << items.len()).saturating_sub(1) {
                let sub: BTreeSet<&str> = items
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask & (1 << k) != 0)
                    .map(|(_, v)| *v)
                    .collect();
                if !sets.contains(&sub) {
                    return Err(Error::InvalidConfig(format!(
                        "reference coding needs a term for covariates {{{}}} below `{}`",
                        sub.into_iter().collect::<Vec<_>>().join(","),
                        self.terms[i].display_name()
                    )));
                }
            }
        }
        Ok(())
    }
}
