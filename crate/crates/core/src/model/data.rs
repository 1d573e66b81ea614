use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One covariate column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Level label of row `i`.
    pub fn label(&self, i: usize) -> String {
        match self {
            Column::Numeric(v) => format!("{}", v[i]),
            Column::Text(v) => v[i].clone(),
        }
    }

    /// Distinct levels, numerically sorted for numeric columns.
    pub fn levels(&self) -> Vec<String> {
        match self {
            Column::Numeric(v) => {
                let mut u = v.clone();
                u.sort_by(f64::total_cmp);
                u.dedup();
                u.iter().map(|x| format!("{x}")).collect()
            }
            Column::Text(v) => {
                let mut u = v.clone();
                u.sort();
                u.dedup();
                u
            }
        }
    }

    fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Text(v) => Column::Text(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

/// A covariate value, used for reference levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Number(f64),
    Level(String),
}

impl CovariateValue {
    pub fn label(&self) -> String {
        match self {
            CovariateValue::Number(x) => format!("{x}"),
            CovariateValue::Level(s) => s.clone(),
        }
    }
}

/// Named covariate columns of equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataTable {
    names: Vec<String>,
    columns: Vec<Column>,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, column: Column) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Data(format!("duplicate covariate `{name}`")));
        }
        if let Some(first) = self.columns.first() {
            if first.len() != column.len() {
                return Err(Error::Data(format!(
                    "covariate `{name}` has {} rows, expected {}",
                    column.len(),
                    first.len()
                )));
            }
        }
        if let Column::Numeric(v) = &column {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Data(format!("covariate `{name}` row {i} is not finite")));
            }
        }
        self.names.push(name);
        self.columns.push(column);
        Ok(())
    }

    pub fn with_numeric(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        self.push(name, Column::Numeric(values))?;
        Ok(self)
    }

    pub fn with_text(mut self, name: &str, values: Vec<String>) -> Result<Self> {
        self.push(name, Column::Text(values))?;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Text(_) => Err(Error::Data(format!("covariate `{name}` is not numeric"))),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&i| i >= self.n_rows()) {
            return Err(Error::Data(format!("row {bad} out of range")));
        }
        Ok(Self {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
        })
    }

    /// Copy with covariate `name` set to `value` in every row.
    pub fn with_constant(&self, name: &str, value: &CovariateValue) -> Result<Self> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))?;
        let n = self.n_rows();
        let mut out = self.clone();
        out.columns[idx] = match (&self.columns[idx], value) {
            (Column::Numeric(_), CovariateValue::Number(x)) => Column::Numeric(vec![*x; n]),
            (Column::Numeric(_), CovariateValue::Level(s)) => {
                let x: f64 = s
                    .parse()
                    .map_err(|_| Error::Data(format!("`{s}` is not a value of numeric `{name}`")))?;
                Column::Numeric(vec![x; n])
            }
            (Column::Text(_), v) => Column::Text(vec![v.label(); n]),
        };
        Ok(out)
    }

    /// Smallest value of a numeric column, or first sorted level otherwise.
    pub fn default_reference(&self, name: &str) -> Result<CovariateValue> {
        Ok(match self.column(name)? {
            Column::Numeric(v) => CovariateValue::Number(
                v.iter()
                    .copied()
                    .min_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal))
                    .ok_or_else(|| Error::Data("empty data".into()))?,
            ),
            c @ Column::Text(_) => CovariateValue::Level(
                c.levels()
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::Data("empty data".into()))?,
            ),
        })
    }
}
