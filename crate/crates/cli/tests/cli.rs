use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use bayesboost_cli::io::{parse_densities, write_densities};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bayesboost"))
}

fn run(dir: &Path, cmd: &str, config: &str, out: &str, extra: &[&str]) -> i32 {
    let cfg = dir.join(format!("{cmd}-{out}.toml"));
    fs::write(&cfg, config).unwrap();
    let status = bin()
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join(out))
        .args(extra)
        .output()
        .unwrap();
    if !status.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&status.stderr));
    }
    status.status.code().unwrap()
}

fn read(dir: &Path, rel: &str) -> String {
    fs::read_to_string(dir.join(rel)).unwrap()
}

/// Column `name` of a tab-separated table with a typed header.
fn column(text: &str, name: &str) -> Vec<String> {
    let mut lines = text.lines().filter(|l| !l.starts_with("#measure"));
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let k = header.iter().position(|h| h.rsplit_once(':').unwrap().0 == name).unwrap();
    lines.map(|l| l.split('\t').nth(k).unwrap().to_string()).collect()
}

const MEASURE: &str = r#"
[measure]
interval = [0.0, 1.0]
atoms = [{location = 0.0, weight = 1.0}, {location = 1.0, weight = 1.0}]
grid_size = 40
"#;

/// Observation table: regions × groups × years, deterministic pseudo-random shares.
fn write_observations(dir: &Path) -> PathBuf {
    let mut s = String::from("region,group,year,share,w\n");
    let mut state: u64 = 12345;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for r in ["east", "west"] {
        for (gi, g) in ["a", "b", "c"].iter().enumerate() {
            for y in 2000..2005 {
                for _ in 0..40 {
                    let u = next();
                    let v = if u < 0.1 {
                        0.0
                    } else if u < 0.15 {
                        1.0
                    } else {
                        // skewed towards low shares, shifted by group
                        let x = next() * next();
                        (x + 0.1 * gi as f64).min(0.99)
                    };
                    s.push_str(&format!("{r},{g},{y},{v},{}\n", 0.5 + next()));
                }
            }
        }
    }
    let p = dir.join("obs.csv");
    fs::write(&p, s).unwrap();
    p
}

fn estimate_config() -> String {
    format!(
        "[input]\nobservations = \"obs.csv\"\n[observations]\ngroups = [\"region\", \"group\", \"year\"]\nvalue = \"share\"\nweight = \"w\"\n{MEASURE}"
    )
}

const FIT_MODEL: &str = r#"
[input]
densities = "est/densities.tsv"
[model]
coding = "reference"
terms = [
  {kind = "intercept"},
  {kind = "group_intercept", covariates = ["region"]},
  {kind = "group_intercept", covariates = ["group"]},
  {kind = "flexible", covariates = ["year"], knots = 3},
]
[boosting]
max_iter = 120
stopping = {method = "bootstrap", replicates = 6}
seed = 5
"#;

fn estimated(dir: &Path) {
    write_observations(dir);
    assert_eq!(run(dir, "estimate", &estimate_config(), "est", &[]), 0);
}

#[test]
fn estimate_three_groups_and_skip_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("obs.tsv"),
        "g\tv\tw\na\t0.2\t1\na\t0.4\t1\na\t0.3\t2\nb\t0\t1\nb\t0\t1\nc\t0.5\t1\nc\t0.7\t1\nc\t1\t1\nc\t0.6\t1\nd\t0.5\t0\n",
    )
    .unwrap();
    let cfg = format!(
        "[input]\nobservations = \"obs.tsv\"\n[observations]\ngroups = [\"g\"]\nvalue = \"v\"\nweight = \"w\"\n{MEASURE}"
    );
    assert_eq!(run(d, "estimate", &cfg, "out", &[]), 0);
    let dens = read(d, "out/densities.tsv");
    let file = parse_densities(&dens, "densities").unwrap();
    assert_eq!(file.densities.len(), 3);
    assert_eq!(column(&dens, "g"), ["a", "b", "c"]);
    // group b sits entirely on the atom at 0: the grid carries only the floor
    let b = &file.densities[1];
    let mass = file.measure.weights();
    let at0 = b.values()[0] * mass[0] / b.integral();
    assert!(at0 > 0.999, "{at0}");
    let report = read(d, "out/estimate_report.tsv");
    assert_eq!(column(&report, "share@0")[1], "1");
    assert_eq!(column(&report, "n"), ["3", "2", "4"]);
    let skipped = read(d, "out/skipped.tsv");
    assert_eq!(column(&skipped, "g"), ["d"]);
}

#[test]
fn density_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    estimated(d);
    let text = read(d, "est/densities.tsv");
    let file = parse_densities(&text, "densities").unwrap();
    assert_eq!(file.densities.len(), 30);
    let again = write_densities(&file).unwrap();
    assert_eq!(again, text);
    let reparsed = parse_densities(&again, "again").unwrap();
    for (a, b) in file.densities.iter().zip(&reparsed.densities) {
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(reparsed, file);

    // the check command agrees
    let cfg = "[input]\ndensities = \"est/densities.tsv\"\n";
    assert_eq!(run(d, "check", cfg, "chk", &[]), 0);
    let check = read(d, "chk/check.tsv");
    assert!(column(&check, "status").iter().all(|s| s == "pass"));
}

#[test]
fn intercept_only_fit_predicts_the_offset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    estimated(d);
    let cfg = "[input]\ndensities = \"est/densities.tsv\"\n[model]\nterms = [{kind = \"intercept\"}]\n[boosting]\nmax_iter = 20\nstopping = {method = \"fixed\"}\n";
    assert_eq!(run(d, "fit", cfg, "fit", &[]), 0);
    let pcfg = "[input]\nmodel = \"fit/model.json\"\ndensities = \"est/densities.tsv\"\n";
    assert_eq!(run(d, "predict", pcfg, "pred", &[]), 0);
    let pred = parse_densities(&read(d, "pred/predictions.tsv"), "pred").unwrap();
    let obs = parse_densities(&read(d, "est/densities.tsv"), "obs").unwrap();
    // the offset is the Bayes mean of the observed densities
    let n = obs.densities.len() as f64;
    let mut mean = obs.densities[0].power(1.0 / n).unwrap();
    for f in &obs.densities[1..] {
        mean = mean.perturb(&f.power(1.0 / n).unwrap()).unwrap();
    }
    for p in &pred.densities {
        assert!(p.equivalent(&mean, 1e-9));
    }
}

#[test]
fn fit_and_simulate_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    estimated(d);
    assert_eq!(run(d, "fit", FIT_MODEL, "f1", &["--threads", "1"]), 0);
    assert_eq!(run(d, "fit", FIT_MODEL, "f4", &["--threads", "4"]), 0);
    for f in ["model.json", "risk.tsv", "selection.tsv", "fit_summary.tsv"] {
        assert_eq!(read(d, &format!("f1/{f}")), read(d, &format!("f4/{f}")), "{f}");
    }
    // both m_stop values are reported for mixed measures
    let summary = read(d, "f1/fit_summary.tsv");
    let comps = column(&summary, "component");
    assert!(comps.contains(&"continuous".to_string()) && comps.contains(&"discrete".to_string()));

    let sim = "[panel]\nyears = 5\ngrid_size = 20\n[boosting]\nmax_iter = 60\nstopping = {method = \"kfold\", folds = 3}\n[simulation]\nreplicates = 3\n";
    assert_eq!(run(d, "simulate", sim, "s1", &["--threads", "1", "--seed", "9"]), 0);
    assert_eq!(run(d, "simulate", sim, "s3", &["--threads", "3", "--seed", "9"]), 0);
    for f in ["simulation.tsv", "selection_table.tsv", "fpca.tsv", "summary.tsv", "truth_model.json"] {
        assert_eq!(read(d, &format!("s1/{f}")), read(d, &format!("s3/{f}")), "{f}");
    }
}

#[test]
fn seed_flag_changes_resampling() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    estimated(d);
    assert_eq!(run(d, "fit", FIT_MODEL, "a", &["--seed", "1"]), 0);
    assert_eq!(run(d, "fit", FIT_MODEL, "b", &["--seed", "2"]), 0);
    assert_ne!(read(d, "a/risk.tsv"), read(d, "b/risk.tsv"));
}

#[test]
fn config_errors_exit_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    estimated(d);
    let cases = [
        ("fit", format!("{FIT_MODEL}\nunknown_key = 1\n")),
        ("fit", FIT_MODEL.replace("max_iter = 120", "max_iter = 120\nstep = 2.0")),
        ("fit", FIT_MODEL.replace("kind = \"flexible\"", "kind = \"wiggly\"")),
        ("fit", "[input]\ndensities = \"est/densities.tsv\"\n".to_string()),
        ("estimate", "[input]\nobservations = \"obs.csv\"\n".to_string()),
    ];
    for (i, (cmd, cfg)) in cases.iter().enumerate() {
        let out = format!("bad{i}");
        assert_eq!(run(d, cmd, cfg, &out, &[]), 2, "case {i}");
        assert!(!d.join(&out).exists(), "case {i} wrote outputs");
    }
    let out = bin().arg("fit").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("dens.tsv"), "not a density file\n").unwrap();
    let cfg = "[input]\ndensities = \"dens.tsv\"\n[model]\nterms = [{kind = \"intercept\"}]\n";
    assert_eq!(run(d, "fit", cfg, "out", &[]), 3);
    assert!(!d.join("out").exists());

    fs::write(d.join("obs.csv"), "g,x\na,0.5\n").unwrap();
    let cfg = format!("[input]\nobservations = \"obs.csv\"\n[observations]\ngroups = [\"g\"]\nvalue = \"share\"\n{MEASURE}");
    assert_eq!(run(d, "estimate", &cfg, "out", &[]), 3);
}

#[test]
fn check_flags_increasing_risk() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    estimated(d);
    assert_eq!(run(d, "fit", FIT_MODEL, "fit", &[]), 0);
    let mut model: serde_json::Value = serde_json::from_str(&read(d, "fit/model.json")).unwrap();
    let risk = model["components"][0]["risk"].as_array_mut().unwrap();
    let first = risk[0].as_f64().unwrap();
    risk[1] = serde_json::json!(first * 2.0);
    fs::write(d.join("broken.json"), serde_json::to_string(&model).unwrap()).unwrap();
    assert_eq!(run(d, "check", "[input]\nmodel = \"broken.json\"\n", "chk", &[]), 3);
    let check = read(d, "chk/check.tsv");
    assert!(column(&check, "status").contains(&"fail".to_string()));
}

#[test]
fn interpretation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    estimated(d);
    assert_eq!(run(d, "fit", FIT_MODEL, "fit", &[]), 0);
    let cfg = r#"
[input]
model = "fit/model.json"
densities = "est/densities.tsv"
[interpret]
terms = ["group_intercept(group)"]
odds = [{t = 0.0, s = 0.5}]
resolution = 8
svg = true
[interpret.did]
a = {covariate = "region", treated = "west", control = "east"}
b = {covariate = "group", treated = "c", control = "a"}
"#;
    assert_eq!(run(d, "interpret", cfg, "int", &[]), 0);
    // the reference category has a zero clr curve
    let effects = read(d, "int/effects.tsv");
    let line = effects.lines().find(|l| l.contains("group=a")).unwrap();
    assert!(line.split('\t').skip(2).all(|v| v.parse::<f64>().unwrap() == 0.0));
    assert_eq!(effects.lines().count(), 4);
    let odds = read(d, "int/odds.tsv");
    assert_eq!(column(&odds, "log_odds")[0], "0");

    let heat = read(d, "int/did_heatmap.tsv");
    let rows: Vec<Vec<f64>> = heat
        .lines()
        .skip(1)
        .map(|l| l.split('\t').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let layout = read(d, "int/did_heatmap_layout.tsv");
    assert_eq!(rows.len(), layout.lines().count() - 1);
    assert_eq!(column(&layout, "kind")[0], "continuous");
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[i], 0.0);
        for (j, v) in r.iter().enumerate() {
            assert!((v + rows[j][i]).abs() < 1e-12);
        }
    }
    for f in ["did.tsv", "did.svg", "did_heatmap.svg", "discrete_odds.tsv"] {
        assert!(d.join("int").join(f).exists(), "{f}");
    }
    assert!(fs::read_dir(d.join("int")).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("effect_")));

    let bad = cfg.replace("group_intercept(group)", "nope");
    assert_eq!(run(d, "interpret", &bad, "int2", &[]), 2);
}

#[test]
fn simulate_without_noise_recovers_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = "[panel]\nyears = 6\ngrid_size = 20\n[boosting]\nmax_iter = 400\nstopping = {method = \"fixed\"}\n[simulation]\nreplicates = 2\nnoise_scale = 0.0\n";
    assert_eq!(run(d, "simulate", sim, "s", &[]), 0);
    let table = read(d, "s/simulation.tsv");
    for v in column(&table, "rel_mse") {
        let v: f64 = v.parse().unwrap();
        assert!(v < 1e-3, "{v}");
    }
}
