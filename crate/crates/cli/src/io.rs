//! Delimited text files: density files, covariate tables, observation tables
//! and output tables.
//!
//! Typed headers name each covariate column `name:num` or `name:text`.
//! Density files start with a `#measure` line carrying the measure as JSON,
//! followed by the typed header, whose value columns are `atom:<location>`
//! and `grid:<node>` in measure order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use bayesboost::bayes::DensityElement;
use bayesboost::ingest::ObservationGroup;
use bayesboost::measure::{MeasureSpec, ReferenceMeasure};
use bayesboost::model::{Column, DataTable};

use crate::error::{data_err, CliError, CliResult};

fn delimiter(path: &Path) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => b',',
        _ => b'\t',
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Writes a table: a header row and string rows, tab separated.
pub fn tsv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join("\t"));
        out.push('\n');
    }
    out
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

fn parse_num(s: &str, what: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::Data(format!("{what}: `{s}` is not a number")))
}

fn typed_name(name: &str, column: &Column) -> String {
    match column {
        Column::Numeric(_) => format!("{name}:num"),
        Column::Text(_) => format!("{name}:text"),
    }
}

fn column_cell(column: &Column, i: usize) -> String {
    match column {
        Column::Numeric(v) => num(v[i]),
        Column::Text(v) => v[i].clone(),
    }
}

/// Covariate names and kinds from a typed header.
fn parse_typed(fields: &[&str]) -> CliResult<Vec<(String, bool)>> {
    fields
        .iter()
        .map(|f| match f.rsplit_once(':') {
            Some((name, "num")) => Ok((name.to_string(), true)),
            Some((name, "text")) => Ok((name.to_string(), false)),
            _ => Err(CliError::Data(format!(
                "header field `{f}` needs a `:num` or `:text` suffix"
            ))),
        })
        .collect()
}

fn build_table(names: &[(String, bool)], cells: &[Vec<String>]) -> CliResult<DataTable> {
    let mut table = DataTable::new();
    for (k, (name, numeric)) in names.iter().enumerate() {
        let column = if *numeric {
            Column::Numeric(
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, r)| parse_num(&r[k], &format!("row {} column `{name}`", i + 1)))
                    .collect::<CliResult<_>>()?,
            )
        } else {
            Column::Text(cells.iter().map(|r| r[k].clone()).collect())
        };
        table.push(name.clone(), column)?;
    }
    Ok(table)
}

pub fn covariate_header(table: &DataTable) -> CliResult<Vec<String>> {
    table
        .names()
        .iter()
        .map(|n| Ok(typed_name(n, table.column(n)?)))
        .collect()
}

pub fn covariate_cells(table: &DataTable, i: usize) -> CliResult<Vec<String>> {
    table
        .names()
        .iter()
        .map(|n| Ok(column_cell(table.column(n)?, i)))
        .collect()
}

/// A covariate table with a typed header.
pub fn read_covariates(path: &Path) -> CliResult<DataTable> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{} is empty", path.display())))?;
    let names = parse_typed(&header.split('\t').collect::<Vec<_>>())?;
    let cells: Vec<Vec<String>> = lines
        .enumerate()
        .map(|(i, l)| {
            let r: Vec<String> = l.split('\t').map(str::to_string).collect();
            if r.len() != names.len() {
                return Err(CliError::Data(format!(
                    "{} row {}: {} fields, expected {}",
                    path.display(),
                    i + 1,
                    r.len(),
                    names.len()
                )));
            }
            Ok(r)
        })
        .collect::<CliResult<_>>()?;
    if cells.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", path.display())));
    }
    build_table(&names, &cells)
}

pub fn write_covariates(table: &DataTable) -> CliResult<String> {
    let rows = (0..table.n_rows())
        .map(|i| covariate_cells(table, i))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(tsv(&covariate_header(table)?, &rows))
}

/// Covariates plus one density per row on a shared measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFile {
    pub measure: Arc<ReferenceMeasure>,
    pub covariates: DataTable,
    pub densities: Vec<DensityElement>,
}

pub fn value_header(measure: &ReferenceMeasure) -> Vec<String> {
    let mut h: Vec<String> = measure.atoms().iter().map(|a| format!("atom:{}", num(a.location))).collect();
    h.extend(measure.grid_nodes().iter().map(|t| format!("grid:{}", num(*t))));
    h
}

pub fn write_densities(file: &DensityFile) -> CliResult<String> {
    let spec = serde_json::to_string(&file.measure.spec()).map_err(data_err)?;
    let mut out = String::new();
    writeln!(out, "#measure\t{spec}").expect("string write");
    let mut header = covariate_header(&file.covariates)?;
    header.extend(value_header(&file.measure));
    let rows = file
        .densities
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut r = covariate_cells(&file.covariates, i)?;
            r.extend(f.values().iter().map(|v| num(*v)));
            Ok(r)
        })
        .collect::<CliResult<Vec<_>>>()?;
    out.push_str(&tsv(&header, &rows));
    Ok(out)
}

pub fn parse_densities(text: &str, origin: &str) -> CliResult<DensityFile> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{origin} is empty")))?;
    let spec_text = first
        .strip_prefix("#measure\t")
        .ok_or_else(|| CliError::Data(format!("{origin}: first line must be `#measure<TAB><json>`")))?;
    let spec: MeasureSpec = serde_json::from_str(spec_text)
        .map_err(|e| CliError::Data(format!("{origin}: measure header: {e}")))?;
    let measure = Arc::new(
        ReferenceMeasure::from_spec(&spec).map_err(|e| CliError::Data(format!("{origin}: measure header: {e}")))?,
    );
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{origin}: missing column header")))?
        .split('\t')
        .collect();
    let n_values = measure.len();
    if header.len() <= n_values {
        return Err(CliError::Data(format!(
            "{origin}: header has {} columns, the measure alone needs {n_values} plus covariates",
            header.len()
        )));
    }
    let n_cov = header.len() - n_values;
    if header[n_cov..] != value_header(&measure)[..] {
        return Err(CliError::Data(format!(
            "{origin}: value columns do not match the measure"
        )));
    }
    let names = parse_typed(&header[..n_cov])?;
    let mut cells = Vec::new();
    let mut densities = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != header.len() {
            return Err(CliError::Data(format!(
                "{origin} row {}: {} fields, expected {}",
                i + 1,
                fields.len(),
                header.len()
            )));
        }
        cells.push(fields[..n_cov].iter().map(|s| s.to_string()).collect());
        let values = fields[n_cov..]
            .iter()
            .map(|s| parse_num(s, &format!("{origin} row {}", i + 1)))
            .collect::<CliResult<Vec<_>>>()?;
        densities.push(
            DensityElement::new(measure.clone(), values)
                .map_err(|e| CliError::Data(format!("{origin} row {}: {e}", i + 1)))?,
        );
    }
    if densities.is_empty() {
        return Err(CliError::Data(format!("{origin} has no density rows")));
    }
    Ok(DensityFile {
        measure,
        covariates: build_table(&names, &cells)?,
        densities,
    })
}

pub fn read_densities(path: &Path) -> CliResult<DensityFile> {
    parse_densities(&read_text(path)?, &path.display().to_string())
}

/// Raw observation rows grouped by covariate combination.
pub struct Observations {
    pub names: Vec<String>,
    pub numeric: Vec<bool>,
    /// Groups in ascending key order (numeric columns compared as numbers).
    pub groups: Vec<(Vec<String>, Vec<f64>, Vec<f64>)>,
}

pub fn read_observations(
    path: &Path,
    group_cols: &[String],
    value_col: &str,
    weight_col: Option<&str>,
) -> CliResult<Observations> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter(path))
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader.headers().map_err(data_err)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("{}: missing column `{name}`", path.display())))
    };
    let key_idx = group_cols.iter().map(|c| find(c)).collect::<CliResult<Vec<_>>>()?;
    let value_idx = find(value_col)?;
    let weight_idx = weight_col.map(find).transpose()?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(data_err)?;
        let key: Vec<String> = key_idx.iter().map(|&k| rec[k].trim().to_string()).collect();
        let what = format!("{} row {}", path.display(), i + 1);
        let v = parse_num(&rec[value_idx], &what)?;
        let w = match weight_idx {
            Some(k) => parse_num(&rec[k], &what)?,
            None => 1.0,
        };
        rows.push((key, v, w));
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", path.display())));
    }
    let numeric: Vec<bool> = (0..group_cols.len())
        .map(|k| rows.iter().all(|(key, _, _)| key[k].parse::<f64>().is_ok()))
        .collect();
    let mut grouped: BTreeMap<Vec<String>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (key, v, w) in rows {
        let e = grouped.entry(key).or_default();
        e.0.push(v);
        e.1.push(w);
    }
    let mut groups: Vec<(Vec<String>, Vec<f64>, Vec<f64>)> =
        grouped.into_iter().map(|(k, (v, w))| (k, v, w)).collect();
    groups.sort_by(|a, b| compare_keys(&a.0, &b.0, &numeric));
    Ok(Observations {
        names: group_cols.to_vec(),
        numeric,
        groups,
    })
}

fn compare_keys(a: &[String], b: &[String], numeric: &[bool]) -> Ordering {
    for ((x, y), n) in a.iter().zip(b).zip(numeric) {
        let o = if *n {
            x.parse::<f64>()
                .unwrap_or(0.0)
                .total_cmp(&y.parse::<f64>().unwrap_or(0.0))
        } else {
            x.cmp(y)
        };
        if o != Ordering::Equal {
            return o;
        }
    }
    Ordering::Equal
}

impl Observations {
    /// Covariate table of the given groups' keys.
    pub fn covariates(&self, keys: &[&[String]]) -> CliResult<DataTable> {
        let names: Vec<(String, bool)> = self
            .names
            .iter()
            .cloned()
            .zip(self.numeric.iter().copied())
            .collect();
        let cells: Vec<Vec<String>> = keys.iter().map(|k| k.to_vec()).collect();
        build_table(&names, &cells)
    }

    /// Valid groups, and the keys of skipped ones with the reason.
    #[allow(clippy::type_complexity)]
    pub fn into_groups(&self) -> (Vec<ObservationGroup>, Vec<(Vec<String>, String)>) {
        let mut ok = Vec::new();
        let mut skipped = Vec::new();
        for (key, v, w) in &self.groups {
            match ObservationGroup::new(key.clone(), v.clone(), w.clone()) {
                Ok(g) => ok.push(g),
                Err(e) => skipped.push((key.clone(), e.to_string())),
            }
        }
        (ok, skipped)
    }
}
