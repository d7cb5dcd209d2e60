//! `dmu` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::CheckpointError;
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] dmu_core::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dmu", version, about = "Train and analyze delay-line recurrent networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Inference gate threshold in [0, 1].
    #[arg(long, value_name = "F")]
    pub theta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Theta,
    N,
    Tau,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write metrics.jsonl, checkpoint.dmu and config.toml.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split and print JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.dmu`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients at initialization.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "F")]
        tol: Option<f64>,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Sweep θ on one trained model, or retrain over n or τ; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', value_name = "F,..")]
        thetas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', value_name = "N,..")]
        ns: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',', value_name = "TAU,..")]
        taus: Option<Vec<usize>>,
        /// With `--axis tau`, use n = span / τ at each point.
        #[arg(long)]
        span: Option<usize>,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Export the gate trace of one test sequence to gate_trace.csv.
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        layer: usize,
    },
    /// Export a weight histogram to histogram.csv.
    Hist {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Tensor name, e.g. `layer0.u_h`.
        #[arg(long)]
        tensor: String,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
