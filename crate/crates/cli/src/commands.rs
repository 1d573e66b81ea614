//! Subcommand implementations. Each returns its output files in memory so
//! nothing is written when a command fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use bayesboost::bayes::{ClrElement, DensityElement, MixedSplit};
use bayesboost::ingest;
use bayesboost::interpret::{self, Contrast};
use bayesboost::measure::{MeasureKind, ReferenceMeasure};
use bayesboost::model::{fit, DataTable, FittedModel};
use bayesboost::sim::{self, panel_spec, synthetic_panel};
use log::info;

use crate::config::RunConfig;
use crate::error::{data_err, CliError, CliResult};
use crate::io::{self, num, tsv, DensityFile};
use crate::svg;

/// Files produced by a command, plus a failure to report after writing them.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<(String, String)>,
    pub failure: Option<CliError>,
}

impl Report {
    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), num)
}

fn read_model(path: &Path) -> CliResult<FittedModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Covariates from `input.covariates`, else from the density file.
fn covariate_source(cfg: &RunConfig) -> CliResult<DataTable> {
    if let Some(p) = &cfg.input.covariates {
        return io::read_covariates(p);
    }
    if let Some(p) = &cfg.input.densities {
        return Ok(io::read_densities(p)?.covariates);
    }
    Err(CliError::Config(
        "missing `input.covariates` or `input.densities` in config".into(),
    ))
}

pub fn estimate(cfg: &RunConfig) -> CliResult<Report> {
    let path = RunConfig::require(&cfg.input.observations, "input.observations")?;
    let cols = RunConfig::require(&cfg.observations, "observations")?;
    let spec = RunConfig::require(&cfg.measure, "measure")?;
    let measure = Arc::new(ReferenceMeasure::from_spec(spec)?);
    let obs = io::read_observations(path, &cols.groups, &cols.value, cols.weight.as_deref())?;
    let (groups, skipped) = obs.into_groups();
    info!("{} groups, {} skipped", groups.len(), skipped.len());
    if groups.is_empty() {
        return Err(CliError::Data("no usable observation group".into()));
    }
    let results = ingest::estimate(&groups, &measure, &cfg.kde)?;
    let keys: Vec<&[String]> = groups.iter().map(|g| g.key.as_slice()).collect();
    let covariates = obs.covariates(&keys)?;

    let mut report = Report::default();
    let file = DensityFile {
        measure: measure.clone(),
        covariates: covariates.clone(),
        densities: results.iter().map(|(f, _)| f.clone()).collect(),
    };
    report.add("densities.tsv", io::write_densities(&file)?);

    let mut h = io::covariate_header(&covariates)?;
    h.push("n:num".into());
    h.extend(measure.atoms().iter().map(|a| format!("share@{}:num", num(a.location))));
    h.extend(header(&["interior:num", "bandwidth:num"]));
    let rows = results
        .iter()
        .enumerate()
        .map(|(i, (_, s))| {
            let mut r = io::covariate_cells(&covariates, i)?;
            r.push(s.n.to_string());
            r.extend(s.shares.atoms.iter().map(|p| num(*p)));
            r.push(num(s.shares.interior));
            r.push(num(s.bandwidth));
            Ok(r)
        })
        .collect::<CliResult<Vec<_>>>()?;
    report.add("estimate_report.tsv", tsv(&h, &rows));

    let mut h: Vec<String> = obs.names.iter().map(|n| format!("{n}:text")).collect();
    h.push("reason:text".into());
    let rows: Vec<Vec<String>> = skipped
        .into_iter()
        .map(|(mut k, reason)| {
            k.push(reason.replace(['\t', '\n'], " "));
            k
        })
        .collect();
    report.add("skipped.tsv", tsv(&h, &rows));
    Ok(report)
}

fn fit_outputs(report: &mut Report, model: &FittedModel, prefix: &str) -> CliResult<()> {
    let json = serde_json::to_string_pretty(model).map_err(data_err)?;
    report.add(&format!("{prefix}model.json"), json + "\n");

    let mut rows = Vec::new();
    for c in &model.components {
        let oob = c.resampling_risk.as_deref().unwrap_or(&[]);
        let last = (c.risk.len() - 1).max(oob.len());
        for m in 0..=last {
            rows.push(vec![
                c.component.as_str().to_string(),
                m.to_string(),
                opt(c.risk.get(m).copied()),
                opt(m.checked_sub(1).and_then(|k| oob.get(k).copied())),
            ]);
        }
    }
    report.add(
        &format!("{prefix}risk.tsv"),
        tsv(&header(&["component:text", "iteration:num", "risk:num", "resampling_risk:num"]), &rows),
    );

    let mut rows = Vec::new();
    for c in &model.components {
        for (m, &j) in c.selection.iter().enumerate() {
            rows.push(vec![
                c.component.as_str().to_string(),
                (m + 1).to_string(),
                model.terms[j].name.clone(),
            ]);
        }
    }
    report.add(
        &format!("{prefix}selection.tsv"),
        tsv(&header(&["component:text", "iteration:num", "term:text"]), &rows),
    );

    let mut rows = Vec::new();
    for c in &model.components {
        let counts = c.selection_counts();
        for (t, n) in model.terms.iter().zip(counts) {
            rows.push(vec![
                c.component.as_str().to_string(),
                c.m_stop.to_string(),
                t.name.clone(),
                num(t.df),
                num(t.lambda),
                n.to_string(),
            ]);
        }
    }
    report.add(
        &format!("{prefix}fit_summary.tsv"),
        tsv(
            &header(&["component:text", "m_stop:num", "term:text", "df:num", "lambda:num", "selected:num"]),
            &rows,
        ),
    );
    Ok(())
}

pub fn fit_cmd(cfg: &RunConfig) -> CliResult<Report> {
    let path = RunConfig::require(&cfg.input.densities, "input.densities")?;
    let spec = RunConfig::require(&cfg.model, "model")?;
    let file = io::read_densities(path)?;
    let model = fit(spec, &file.covariates, &file.densities, &cfg.boosting)?;
    for c in &model.components {
        info!("{}: m_stop {}", c.component.as_str(), c.m_stop);
    }
    let mut report = Report::default();
    fit_outputs(&mut report, &model, "")?;
    Ok(report)
}

pub fn predict(cfg: &RunConfig) -> CliResult<Report> {
    let model = read_model(RunConfig::require(&cfg.input.model, "input.model")?)?;
    let covariates = covariate_source(cfg)?;
    let densities = model.predict(&covariates)?;
    let measure = densities
        .first()
        .map(|f| f.measure().clone())
        .ok_or_else(|| CliError::Data("no covariate rows".into()))?;
    let mut report = Report::default();
    report.add(
        "predictions.tsv",
        io::write_densities(&DensityFile {
            measure,
            covariates,
            densities,
        })?,
    );
    Ok(report)
}

/// First row index of every distinct combination of `names`.
fn distinct_rows(table: &DataTable, names: &[String]) -> CliResult<Vec<(usize, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for i in 0..table.n_rows() {
        let label = names
            .iter()
            .map(|n| Ok(format!("{n}={}", table.column(n)?.label(i))))
            .collect::<CliResult<Vec<_>>>()?
            .join(";");
        if seen.insert(label.clone()) {
            out.push((i, label));
        }
    }
    Ok(out)
}

fn curve(label: String, measure: &ReferenceMeasure, values: &[f64]) -> svg::Curve {
    let k = measure.n_atoms();
    svg::Curve {
        label,
        atoms: measure.atoms().iter().zip(values).map(|(a, v)| (a.location, *v)).collect(),
        grid: measure.grid_nodes().iter().zip(&values[k..]).map(|(t, v)| (*t, *v)).collect(),
    }
}

pub fn interpret(cfg: &RunConfig) -> CliResult<Report> {
    let model = read_model(RunConfig::require(&cfg.input.model, "input.model")?)?;
    let table = covariate_source(cfg)?;
    let icfg = &cfg.interpret;
    let measure = model.prepare()?.measure;
    let terms: Vec<usize> = match &icfg.terms {
        Some(names) => names
            .iter()
            .map(|n| {
                model
                    .term_index(n)
                    .map_err(|_| CliError::Config(format!("[interpret] unknown term `{n}`")))
            })
            .collect::<CliResult<_>>()?,
        None => (0..model.terms.len()).collect(),
    };
    let pairs = icfg
        .odds
        .iter()
        .map(|p| {
            let idx = |x: f64| {
                interpret::support_index(&measure, x)
                    .map_err(|e| CliError::Config(format!("[interpret] odds point {x}: {e}")))
            };
            Ok((p.t, p.s, idx(p.t)?, idx(p.s)?))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut report = Report::default();
    let mut effects = Vec::new();
    let mut odds = Vec::new();
    let mut discrete = Vec::new();
    let mut svgs = Vec::new();
    for &j in &terms {
        let term = &model.terms[j];
        let rows = distinct_rows(&table, &term.covariates)?;
        let idx: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let z = model.effect_clr(j, &table.select_rows(&idx)?)?;
        let mut curves = Vec::new();
        for (r, (_, at)) in rows.iter().enumerate() {
            let values: Vec<f64> = z.row(r).iter().copied().collect();
            let mut line = vec![term.name.clone(), at.clone()];
            line.extend(values.iter().map(|v| num(*v)));
            effects.push(line);
            let clr = ClrElement::centered(measure.clone(), values.clone())?;
            for &(t, s, ti, si) in &pairs {
                let lo = interpret::log_odds(&clr, ti, si)?;
                odds.push(vec![term.name.clone(), at.clone(), num(t), num(s), num(lo), num(lo.exp())]);
            }
            let density = clr.to_density();
            for (k, a) in measure.atoms().iter().enumerate() {
                let o = match measure.kind() {
                    MeasureKind::Mixed => interpret::mixed_discrete_odds(&density, k)?,
                    _ => interpret::geometric_mean_odds(&density, k)?,
                };
                discrete.push(vec![term.name.clone(), at.clone(), num(a.location), num(o)]);
            }
            if icfg.svg {
                curves.push(curve(at.clone(), &measure, &values));
            }
        }
        if icfg.svg {
            svgs.push((format!("effect_{j}.svg"), svg::curves(&format!("clr effect: {}", term.name), &curves)));
        }
    }
    let mut h = header(&["term:text", "at:text"]);
    h.extend(io::value_header(&measure));
    report.add("effects.tsv", tsv(&h, &effects));
    report.add(
        "odds.tsv",
        tsv(&header(&["term:text", "at:text", "t:num", "s:num", "log_odds:num", "odds:num"]), &odds),
    );
    if measure.n_atoms() > 0 {
        report.add(
            "discrete_odds.tsv",
            tsv(&header(&["term:text", "at:text", "atom:num", "odds:num"]), &discrete),
        );
    }

    if let Some(did) = &icfg.did {
        let mut base = table.select_rows(&[0])?;
        for (name, value) in model.references.iter().chain(&did.at) {
            base = base.with_constant(name, value)?;
        }
        let contrast = |c: &crate::config::ContrastConfig| {
            Contrast::new(&c.covariate, c.treated.clone(), c.control.clone())
        };
        let effect = interpret::did_effect(&model, &base, &contrast(&did.a), &contrast(&did.b))?;
        let clr = effect.clr();
        let mut h = io::covariate_header(&base)?;
        h.extend(io::value_header(&measure));
        let mut row = io::covariate_cells(&base, 0)?;
        row.extend(clr.values().iter().map(|v| num(*v)));
        report.add("did.tsv", tsv(&h, &[row]));

        let grid = interpret::heatmap(&effect, icfg.resolution)?;
        let n = grid.points.len();
        let mut h = vec!["row:num".to_string()];
        h.extend((0..n).map(|c| format!("c{c}:num")));
        let rows: Vec<Vec<String>> = (0..n)
            .map(|r| {
                let mut line = vec![r.to_string()];
                line.extend(grid.log_odds.row(r).iter().map(|v| num(*v)));
                line
            })
            .collect();
        report.add("did_heatmap.tsv", tsv(&h, &rows));
        let layout: Vec<Vec<String>> = grid
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| vec![k.to_string(), p.kind.as_str().to_string(), num(p.location)])
            .collect();
        report.add(
            "did_heatmap_layout.tsv",
            tsv(&header(&["index:num", "kind:text", "location:num"]), &layout),
        );
        if icfg.svg {
            report.add("did.svg", svg::curves("DiD clr effect", &[curve("did".into(), &measure, clr.values())]));
            let labels: Vec<String> = grid
                .points
                .iter()
                .map(|p| match p.kind {
                    interpret::PointKind::Continuous => "cont".to_string(),
                    _ => format!("{:.2}", p.location),
                })
                .collect();
            report.add("did_heatmap.svg", svg::heatmap("DiD log odds", &labels, &grid.log_odds));
        }
    }
    for (name, s) in svgs {
        report.add(&name, s);
    }
    Ok(report)
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Report> {
    let (spec, data, responses) = match (&cfg.input.densities, &cfg.panel) {
        (Some(path), _) => {
            let file = io::read_densities(path)?;
            let spec = RunConfig::require(&cfg.model, "model")?.clone();
            (spec, file.covariates, file.densities)
        }
        (None, Some(panel)) => {
            let (data, ys) = synthetic_panel(panel)?;
            (cfg.model.clone().unwrap_or_else(panel_spec), data, ys)
        }
        (None, None) => {
            return Err(CliError::Config(
                "simulate needs `input.densities` or a `[panel]` section".into(),
            ))
        }
    };
    let truth = fit(&spec, &data, &responses, &cfg.boosting)?;
    let (_, fpca) = sim::residual_fpca(&truth, &data, &responses, cfg.simulation.components)?;
    info!(
        "truth m_stop {:?}, {} noise components",
        truth.components.iter().map(|c| c.m_stop).collect::<Vec<_>>(),
        fpca.n_components()
    );
    let results = sim::run_study(&truth, &data, &fpca, &cfg.simulation, &cfg.boosting)?;

    let mut report = Report::default();
    fit_outputs(&mut report, &truth, "truth_")?;

    let comps: Vec<&str> = truth.components.iter().map(|c| c.component.as_str()).collect();
    let mut h = header(&["replicate:num", "rel_mse:num"]);
    h.extend(comps.iter().map(|c| format!("m_stop_{c}:num")));
    h.extend(truth.terms.iter().map(|t| format!("rel_mse[{}]:num", t.name)));
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            let mut line = vec![r.replicate.to_string(), num(r.rel_mse)];
            line.extend(r.m_stop.iter().map(|m| m.to_string()));
            line.extend(r.effect_rel_mse.iter().map(|e| opt(*e)));
            line
        })
        .collect();
    report.add("simulation.tsv", tsv(&h, &rows));

    let names: Vec<String> = truth.terms.iter().map(|t| t.name.clone()).collect();
    let sel: Vec<Vec<Vec<usize>>> = results.iter().map(|r| r.selection.clone()).collect();
    let mut h = header(&["term:text"]);
    h.extend(comps.iter().map(|c| format!("selected_{c}:num")));
    h.extend(header(&["combined:num", "replicates:num"]));
    let rows: Vec<Vec<String>> = sim::selection_table(&names, &sel)
        .into_iter()
        .map(|s| {
            let mut line = vec![s.term.clone()];
            line.extend(s.selected.iter().map(|n| n.to_string()));
            line.push(s.combined.to_string());
            line.push(s.replicates.to_string());
            line
        })
        .collect();
    report.add("selection_table.tsv", tsv(&h, &rows));

    let total: f64 = fpca.eigenvalues.iter().sum();
    let rows: Vec<Vec<String>> = fpca
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, v)| vec![(k + 1).to_string(), num(*v), num(if total > 0.0 { v / total } else { 0.0 })])
        .collect();
    report.add("fpca.tsv", tsv(&header(&["component:num", "eigenvalue:num", "share:num"]), &rows));

    let rel: Vec<f64> = results.iter().map(|r| r.rel_mse).collect();
    let summary = vec![
        vec!["replicates".to_string(), results.len().to_string()],
        vec!["median_rel_mse".to_string(), opt(sim::median(&rel))],
        vec!["mean_rel_mse".to_string(), num(rel.iter().sum::<f64>() / rel.len() as f64)],
        vec!["max_rel_mse".to_string(), num(rel.iter().copied().fold(f64::NEG_INFINITY, f64::max))],
    ];
    report.add("summary.tsv", tsv(&header(&["key:text", "value:num"]), &summary));
    Ok(report)
}

struct Checks {
    rows: Vec<Vec<String>>,
    failed: usize,
}

impl Checks {
    fn record(&mut self, subject: &str, check: &str, value: f64, pass: bool) {
        self.failed += usize::from(!pass);
        self.rows.push(vec![
            subject.to_string(),
            check.to_string(),
            num(value),
            if pass { "pass" } else { "fail" }.to_string(),
        ]);
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn check_density(checks: &mut Checks, subject: &str, f: &DensityElement, split: Option<&MixedSplit>) -> CliResult<()> {
    let ok = f.values().iter().all(|v| v.is_finite() && *v > 0.0);
    checks.record(subject, "positive_finite", f64::from(u8::from(ok)), ok);
    let z = f.clr();
    let scale = 1.0 + z.norm();
    let int = z.integral().abs() / scale;
    checks.record(subject, "clr_integral_zero", int, int <= 1e-10);
    let back = z.to_density();
    let gap = f
        .normalized()
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()))
        .fold(0.0, f64::max);
    checks.record(subject, "clr_roundtrip", gap, gap <= 1e-10);
    if let Some(split) = split {
        let (fc, fd) = split.decompose(f)?;
        let gap = rel_gap(f.norm_sq(), fc.norm_sq() + fd.norm_sq());
        checks.record(subject, "mixed_norm_split", gap, gap <= 1e-9);
        let back = split.combine(&fc, &fd)?;
        let ok = back.equivalent(f, 1e-10);
        checks.record(subject, "mixed_roundtrip", f64::from(u8::from(ok)), ok);
    }
    Ok(())
}

pub fn check(cfg: &RunConfig) -> CliResult<Report> {
    let mut checks = Checks {
        rows: Vec::new(),
        failed: 0,
    };
    if cfg.input.densities.is_none() && cfg.input.model.is_none() {
        return Err(CliError::Config(
            "check needs `input.densities` and/or `input.model`".into(),
        ));
    }
    if let Some(path) = &cfg.input.densities {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let file = io::parse_densities(&text, &path.display().to_string())?;
        let again = io::parse_densities(&io::write_densities(&file)?, "rewritten file")?;
        let ok = again == file;
        checks.record("file", "serialization_roundtrip", f64::from(u8::from(ok)), ok);
        let split = match file.measure.kind() {
            MeasureKind::Mixed => Some(MixedSplit::new(file.measure.clone())?),
            _ => None,
        };
        for (i, f) in file.densities.iter().enumerate() {
            check_density(&mut checks, &format!("row {}", i + 1), f, split.as_ref())?;
        }
    }
    if let Some(path) = &cfg.input.model {
        let model = read_model(path)?;
        for c in &model.components {
            let worst = c
                .risk
                .windows(2)
                .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
                .fold(0.0, f64::max);
            checks.record(
                &format!("model {}", c.component.as_str()),
                "risk_non_increasing",
                worst,
                worst <= 1e-9,
            );
        }
        if let Some(path) = &cfg.input.densities {
            let file = io::read_densities(path)?;
            let pred = model.predict(&file.covariates)?;
            let ok = pred.len() == file.densities.len();
            checks.record("model", "predicts_file_rows", f64::from(u8::from(ok)), ok);
        }
    }
    let mut report = Report::default();
    if checks.failed > 0 {
        report.failure = Some(CliError::Data(format!("{} check(s) failed", checks.failed)));
    }
    report.add(
        "check.tsv",
        tsv(&header(&["subject:text", "check:text", "value:num", "status:text"]), &checks.rows),
    );
    Ok(report)
}
