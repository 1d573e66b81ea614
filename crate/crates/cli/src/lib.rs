//! Command-line front end: estimate densities from observation tables, fit
//! and apply density regression models, interpret effects and run
//! simulation studies. All inputs come from a TOML run configuration.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bayesboost", version, about = "Density-on-scalar regression by boosting in Bayes spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Master seed, overriding the seeds in the configuration.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, short)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate one density per covariate combination from raw observations.
    Estimate(Common),
    /// Fit a model to a density file.
    Fit(Common),
    /// Predict densities for a covariate table.
    Predict(Common),
    /// Effect curves, odds tables and difference-in-differences heatmaps.
    Interpret(Common),
    /// Simulation study around a fitted model.
    Simulate(Common),
    /// Validate a density file and/or a model file.
    Check(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Estimate(c)
            | Command::Fit(c)
            | Command::Predict(c)
            | Command::Interpret(c)
            | Command::Simulate(c)
            | Command::Check(c) => c,
        }
    }
}

fn write_outputs(dir: &Path, files: &[(String, String)]) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    files
        .iter()
        .map(|(name, contents)| {
            let p = dir.join(name);
            std::fs::write(&p, contents)
                .map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display())))?;
            Ok(p)
        })
        .collect()
}

/// Runs a parsed command and returns the paths written.
pub fn run(command: &Command) -> CliResult<Vec<PathBuf>> {
    let common = command.common();
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply_seed(common.seed);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let report = pool.install(|| match command {
        Command::Estimate(_) => commands::estimate(&cfg),
        Command::Fit(_) => commands::fit_cmd(&cfg),
        Command::Predict(_) => commands::predict(&cfg),
        Command::Interpret(_) => commands::interpret(&cfg),
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Check(_) => commands::check(&cfg),
    })?;
    let written = write_outputs(&common.out, &report.files)?;
    match report.failure {
        Some(e) => Err(e),
        None => Ok(written),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if cli.command.common().verbose {
        let _ = env_logger::Builder::from_default_env()
            .filter_level(log::LevelFilter::Info)
            .try_init();
    }
    match run(&cli.command) {
        Ok(paths) => {
            for p in paths {
                log::info!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("bayesboost: {e}");
            e.exit_code()
        }
    }
}
