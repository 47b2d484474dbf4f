//! Command-line front end. [`run`] parses arguments and executes one
//! subcommand on a dedicated worker pool.

mod commands;
pub mod config;
pub mod error;
mod output;

pub use commands::Bundle;
pub use error::CliError;

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

/// Penalized regression calibration: dynamic survival prediction from
/// many longitudinal markers.
#[derive(Debug, Parser)]
#[command(name = "prc", version, about)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for output files; created if missing.
    #[arg(long, default_value = "prc-out")]
    out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the pipeline and report naive metrics.
    Fit {
        #[command(flatten)]
        common: Common,
    },
    /// Predict survival curves for new subjects with a fitted model.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Model bundle written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Longitudinal CSV of the new subjects.
        #[arg(long)]
        longitudinal: PathBuf,
        /// CSV with `subject`, `baseline_age` and optionally `time`, `status`.
        #[arg(long)]
        subjects: PathBuf,
        /// Comma-separated prediction times in years from baseline; an
        /// empty string gives no times.
        #[arg(long)]
        times: Option<String>,
    },
    /// Optimism-corrected metrics by cluster bootstrap.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Generate simulated studies.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Predefined scenario 1-12 (overrides the configuration).
        #[arg(long)]
        scenario: Option<u32>,
        /// Subjects per study.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Compute metrics and the Kaplan-Meier table for given scores.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Survival CSV with the observed outcomes.
        #[arg(long)]
        survival: PathBuf,
        /// Model bundle; scores are its linear predictor.
        #[arg(long, conflicts_with = "scores", requires = "longitudinal")]
        model: Option<PathBuf>,
        /// Longitudinal CSV for `--model`.
        #[arg(long)]
        longitudinal: Option<PathBuf>,
        /// CSV with `subject`, `score`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Fit { common }
            | Command::Predict { common, .. }
            | Command::Validate { common }
            | Command::Simulate { common, .. }
            | Command::Evaluate { common, .. } => common,
        }
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            CliError::Help(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    })?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.command.common().workers {
        pool = pool.num_threads(w.max(1));
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit { common } => commands::fit(&common),
        Command::Predict {
            common,
            model,
            longitudinal,
            subjects,
            times,
        } => commands::predict(&common, &model, &longitudinal, &subjects, times.as_deref()),
        Command::Validate { common } => commands::validate(&common),
        Command::Simulate { common, scenario, n } => commands::simulate(&common, scenario, n),
        Command::Evaluate {
            common,
            survival,
            model,
            longitudinal,
            scores,
        } => commands::evaluate(&common, &survival, model.as_deref(), longitudinal.as_deref(), scores.as_deref()),
    }
}
