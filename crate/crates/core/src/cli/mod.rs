//! Command-line front end. Every filesystem write in the crate happens here.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ArchSection, IoSection, PipelineSection, RunConfig};

use crate::error::Error;

pub const THREADS_ENV: &str = "RELUREDUCE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "relureduce", version, about = "ReLU reduction for private-inference CNNs")]
pub struct Cli {
    /// JSON config with sections arch, train, kd, pipeline, io.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for candidate training; falls back to RELUREDUCE_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Validate everything and print the plan without writing files.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer and per-stage ReLU/FLOP/parameter counts.
    Profile(ArchArgs),
    /// Stage criticality scores and culling order.
    Criticality(CriticalityArgs),
    /// Run the reduction pipeline and emit the Pareto set.
    Reduce(ReduceArgs),
    /// Fold batch norm and merge linear chains in a checkpoint.
    Merge(MergeArgs),
    /// Private-inference latency estimates from ReLU counts.
    Estimate(EstimateArgs),
    /// Train one network, optionally distilling from a teacher checkpoint.
    Train(TrainArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ArchArgs {
    /// resnet18, resnet34, resnet56, resnet10, resnet9, resnet6, vgg16, mobilenetv1
    #[arg(long)]
    pub arch: Option<String>,
    /// Input side length.
    #[arg(long)]
    pub input: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub strip_residuals: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// synthetic-blobs, cifar10-binary or cifar100-binary
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    /// Synthetic blob noise.
    #[arg(long)]
    pub noise: Option<f32>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CriticalityArgs {
    /// Measurements CSV `stage,relus,acc_wo_kd,acc_w_kd`; skips training.
    #[arg(long)]
    pub from_csv: Option<PathBuf>,
    /// Criticality exponent.
    #[arg(long)]
    pub w: Option<f64>,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    /// Candidate CSV `culled,thinned,alpha,rho,relus,accuracy[,latency_s]`; skips training.
    #[arg(long)]
    pub accuracy_from_csv: Option<PathBuf>,
    /// Stage measurements CSV replacing probe training.
    #[arg(long)]
    pub from_csv: Option<PathBuf>,
    /// Culling order, e.g. `S1,S4,S2`.
    #[arg(long, value_delimiter = ',')]
    pub stages_override: Option<Vec<String>>,
    /// keep-odd, keep-even or drop-depthwise
    #[arg(long)]
    pub parity: Option<String>,
    #[arg(long)]
    pub w: Option<f64>,
    /// Record failed candidates instead of aborting.
    #[arg(long)]
    pub keep_going: bool,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Maximum relative L-infinity error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// ReLU counts in thousands; a `K` suffix is accepted.
    pub kilo_relus: Vec<String>,
    /// Read raw ReLU counts from the `relus` column of a pareto or candidates CSV.
    #[arg(long)]
    pub pareto: Option<PathBuf>,
    /// Refit from a CSV `kilo_relus,latency_s` instead of the bundled points.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Minimize squared relative instead of absolute error.
    #[arg(long)]
    pub relative: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Distill from this checkpoint.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Checkpoint to write; defaults to `<out-dir>/model.rrdk`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// A failed command: message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

/// 2 config/usage, 3 build/validate, 4 training.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InputTooSmall { .. }
        | Error::Shape { .. }
        | Error::InvalidGraph(_)
        | Error::Stage(_)
        | Error::Pass { .. } => 3,
        Error::Engine(_)
        | Error::BackwardBeforeForward
        | Error::EmptyDataset
        | Error::TrainingDiverged(_)
        | Error::Candidate { .. } => 4,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
