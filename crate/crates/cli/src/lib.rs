//! Command-line front end for residual randomization tests.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::ConfigError;
use crate::ingest::IngestError;

/// Exit status for input errors.
pub const EXIT_INPUT: u8 = 2;
/// Exit status for errors raised while computing.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{flag}: {message}")]
    Flag { flag: String, message: String },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Ingest(#[from] IngestError),

    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },

    #[error(transparent)]
    Model(#[from] resrand::Error),
}

impl CliError {
    pub fn flag(flag: &str, message: impl Into<String>) -> Self {
        CliError::Flag {
            flag: flag.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(_) => EXIT_NUMERICAL,
            CliError::Ingest(IngestError::Model(_)) => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Flag { .. } => "flag",
            CliError::Config(_) => "config",
            CliError::Ingest(IngestError::Model(_)) => "model",
            CliError::Ingest(_) => "input",
            CliError::Output { .. } => "output",
            CliError::Model(_) => "model",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
            }
        })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "resrand",
    version,
    about = "Residual randomization tests for linear regression"
)]
pub struct Cli {
    /// Worker threads (0 uses all cores).
    #[arg(long, global = true, env = "RESRAND_THREADS")]
    pub threads: Option<usize>,

    /// Configuration file with `key = value` lines and `[subcommand]` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a linear hypothesis, optionally under several primitives.
    Test(TestArgs),
    /// Confidence interval for one coefficient by test inversion.
    Ci(CiArgs),
    /// Exact cluster sign test for a binary treatment.
    Exact(ExactArgs),
    /// Reflection test for autocorrelated errors.
    Reflect(ReflectArgs),
    /// Bonferroni family of coefficient tests for high-dimensional designs.
    Highdim(HighdimArgs),
    /// Run a Monte Carlo study.
    Simulate(SimulateArgs),
    /// Check how well sampled primitives average the design.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct DataArgs {
    /// CSV file with a `y` column and covariates named `x*`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Do not prepend an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Clone, Args, Default)]
pub struct HypothesisArgs {
    /// Contrast vector `a` as a comma-separated list, one entry per design column.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<String>,
    /// Test a single coefficient (0-based design column index).
    #[arg(long)]
    pub coef: Option<usize>,
    /// Null value of `a'beta`.
    #[arg(long, allow_hyphen_values = true)]
    pub a0: Option<f64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct RunArgs {
    /// Randomization draws.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// two-sided, greater or less.
    #[arg(long)]
    pub sidedness: Option<String>,
    /// sampled or enumerated.
    #[arg(long)]
    pub mode: Option<String>,
    /// Largest group to enumerate in enumerated mode.
    #[arg(long)]
    pub enum_cap: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hypothesis: HypothesisArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Invariance primitive; repeat to compare several.
    #[arg(long)]
    pub primitive: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub primitive: Option<String>,
    /// Coefficient (0-based design column index).
    #[arg(long)]
    pub coef: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExactArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hypothesis: HypothesisArgs,
    /// Number of balanced clusters.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seeds the random split into clusters.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReflectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hypothesis: HypothesisArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Target number of clusters.
    #[arg(long)]
    pub j: Option<usize>,
    /// conditional or unconditional.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct HighdimArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub primitive: Option<String>,
    #[arg(long)]
    pub lambda_ridge: Option<f64>,
    #[arg(long)]
    pub lambda_lasso: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Registered scenario id (see `--list`).
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON scenario file, used with `--method`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// JSON method description; repeatable.
    #[arg(long)]
    pub method: Vec<String>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub a0: Option<f64>,
    /// json or csv.
    #[arg(long)]
    pub format: Option<String>,
    /// List registered scenario ids and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub primitive: Option<String>,
    /// Comma-separated draw counts.
    #[arg(long)]
    pub draws: Option<String>,
    /// Independent runs averaged at each draw count.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args`, runs the command and writes the report. Returns the exit
/// status.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_INPUT;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match commands::execute(&cli) {
        Ok(text) => match &cli.out {
            Some(path) => match std::fs::write(path, text) {
                Ok(()) => 0,
                Err(e) => {
                    let err = CliError::Output {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    };
                    let _ = writeln!(stderr, "{}", err.to_json());
                    err.exit_code()
                }
            },
            None => {
                let _ = stdout.write_all(text.as_bytes());
                0
            }
        },
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.to_json());
            err.exit_code()
        }
    }
}
