//! Command-line front end: scenario documents in, JSON reports and CSV
//! series out.
//!
//! Exit codes: 0 on success, 2 on validation errors, 3 on numerical failure,
//! 1 when outputs cannot be written.

pub mod config;
pub mod run;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{load_config, parse_config, validate, Mode, Scenario, ScenarioConfig};
pub use run::{run, RunReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("{op}: {source}")]
    Numerical {
        op: &'static str,
        source: adiabatic_readout::Error,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical { source: adiabatic_readout::Error::InvalidParameter { .. }, .. } => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "adiabatic-readout", version, about = "Phase-qubit readout by adiabatic spin reversals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: `output.dir` of the config, else `out/<config stem>`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        mode_override: Option<Mode>,
    },
    /// Run several scenarios in parallel, each into `<out>/<config stem>`.
    Sweep {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(long)]
        tol: Option<f64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into())
}

/// Load, apply the command-line overrides and validate.
pub fn prepare(path: &Path, tol: Option<f64>, mode: Option<Mode>) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(t) = tol {
        cfg.numerics.tol = Some(t);
    }
    validate(cfg)
}

pub fn run_one(path: &Path, out: Option<&Path>, tol: Option<f64>, mode: Option<Mode>) -> Result<RunReport, CliError> {
    let scenario = prepare(path, tol, mode)?;
    let dir = match (out, &scenario.config.output.dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => Path::new("out").join(stem(path)),
    };
    run(&scenario, &dir)
}

#[derive(Debug, Serialize)]
pub struct SweepEntry {
    pub config: PathBuf,
    pub out: PathBuf,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

/// Distinct output directories per config; repeated stems get an index suffix.
pub fn sweep_dirs(configs: &[PathBuf], out: &Path) -> Vec<PathBuf> {
    let stems: Vec<String> = configs.iter().map(|c| stem(c)).collect();
    stems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if stems.iter().filter(|t| *t == s).count() > 1 {
                out.join(format!("{s}-{i}"))
            } else {
                out.join(s)
            }
        })
        .collect()
}

pub fn sweep(configs: &[PathBuf], out: &Path, tol: Option<f64>) -> Vec<SweepEntry> {
    let dirs = sweep_dirs(configs, out);
    configs
        .par_iter()
        .zip(dirs.par_iter())
        .map(|(c, d)| match run_one(c, Some(d), tol, None) {
            Ok(r) => SweepEntry { config: c.clone(), out: d.clone(), exit_code: 0, error: None, passed: Some(r.passed()) },
            Err(e) => SweepEntry { config: c.clone(), out: d.clone(), exit_code: e.exit_code(), error: Some(e.to_string()), passed: None },
        })
        .collect()
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { config, out, tol, mode_override } => match run_one(&config, out.as_deref(), tol, mode_override) {
            Ok(report) => {
                for c in &report.acceptance {
                    println!("{}: {} {}", c.name, if c.pass { "pass" } else { "FAIL" }, c.detail);
                }
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Sweep { configs, out, tol, jobs } => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 1;
                }
            };
            let entries = pool.install(|| sweep(&configs, &out, tol));
            if let Err(e) = std::fs::create_dir_all(&out)
                .and_then(|_| std::fs::write(out.join("sweep.json"), serde_json::to_vec_pretty(&entries).unwrap_or_default()))
            {
                eprintln!("error: {}: {e}", out.display());
                return 1;
            }
            for e in &entries {
                println!("{}: exit {}{}", e.config.display(), e.exit_code, e.error.as_deref().map(|m| format!(" ({m})")).unwrap_or_default());
            }
            entries.iter().map(|e| e.exit_code).max().unwrap_or(0)
        }
    }
}
