//! Command-line front end: reads a problem file, runs one of the solver
//! pipelines and writes CSV tables plus a JSON run record.

mod commands;
mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::execute;

#[derive(Debug, Parser)]
#[command(
    name = "scendec",
    version,
    about = "Scenario-decomposition solvers for stochastic control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Linear-quadratic control with nonseparable costs.
    RunQp(RunArgs),
    /// Expected-utility portfolio selection with smoothing.
    RunUtility(RunArgs),
    /// Mean-variance portfolio selection with smoothing, next to the
    /// unsmoothed closed-form policy.
    RunMv(RunArgs),
    /// Compare progressive hedging with the backward recursion on the
    /// stage-separable part of a linear-quadratic problem.
    CheckLq(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RunQp(_) => "run-qp",
            Command::RunUtility(_) => "run-utility",
            Command::RunMv(_) => "run-mv",
            Command::CheckLq(_) => "check-lq",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::RunQp(a)
            | Command::RunUtility(a)
            | Command::RunMv(a)
            | Command::CheckLq(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Problem file, or `builtin:<name>` for a bundled example.
    #[arg(long)]
    pub input: String,
    /// Result directory; overrides the file's `output.directory`.
    #[arg(long)]
    pub outdir: Option<PathBuf>,
    #[arg(long, value_parser = positive)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub epsilon: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iter: Option<u64>,
    /// λ grid step (run-mv).
    #[arg(long, value_parser = positive)]
    pub theta: Option<f64>,
    /// Smoothing weight (run-utility, run-mv).
    #[arg(long, value_parser = nonnegative)]
    pub gamma: Option<f64>,
    /// Variance weight (run-mv).
    #[arg(long, value_parser = nonnegative)]
    pub w: Option<f64>,
    /// Debug logging plus consistency checks in the run record.
    #[arg(long)]
    pub diagnostics: bool,
    /// Worker threads for the scenario solves.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn nonnegative(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("{v} must be nonnegative"))
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::NotConverged(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Write { .. } => 1,
        }
    }

    pub(crate) fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<scendec::Error> for CliError {
    fn from(e: scendec::Error) -> Self {
        use scendec::Error as E;
        let text = e.to_string();
        match e.root() {
            E::InvalidInput(_) | E::DimensionMismatch(_) => CliError::Config(text),
            E::NotConverged { .. } | E::Diverged { .. } => CliError::NotConverged(text),
            _ => CliError::Numeric(text),
        }
    }
}

/// Bundled problem files addressable as `builtin:<name>`.
pub const BUILTIN: [(&str, &str); 6] = [
    ("example-qp", scendec::fixtures::EXAMPLE_QP),
    (
        "example-qp-separable",
        scendec::fixtures::EXAMPLE_QP_SEPARABLE,
    ),
    (
        "example-qp-deterministic",
        scendec::fixtures::EXAMPLE_QP_DETERMINISTIC,
    ),
    ("example-utility", scendec::fixtures::EXAMPLE_UTILITY),
    (
        "example-utility-flat",
        scendec::fixtures::EXAMPLE_UTILITY_FLAT,
    ),
    ("example-mv", scendec::fixtures::EXAMPLE_MV),
];

pub fn read_input(input: &str) -> Result<String, CliError> {
    if let Some(name) = input.strip_prefix("builtin:") {
        return BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| {
                let names: Vec<_> = BUILTIN.iter().map(|(n, _)| *n).collect();
                CliError::Config(format!(
                    "unknown bundled example `{name}`; available: {}",
                    names.join(", ")
                ))
            });
    }
    std::fs::read_to_string(input)
        .map_err(|e| CliError::Config(format!("cannot read {input}: {e}")))
}
