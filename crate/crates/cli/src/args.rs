use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "jumpfisher", version, about = "Fisher information of quantum jump measurement records")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Base seed; trajectory i draws from stream (seed, i).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (1 runs sequentially; default uses every core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory for output files and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Model configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Built-in model name.
    #[arg(long, global = true, conflicts_with = "config")]
    pub model: Option<String>,

    /// Parameter overrides `name=value[,name=value...]`, applied after the config file.
    #[arg(long = "set", global = true, value_name = "ASSIGNMENTS")]
    pub sets: Vec<String>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StopArgs {
    /// Stop each record after this many jumps.
    #[arg(long, conflicts_with = "stop_time")]
    pub stop_jumps: Option<usize>,

    /// Stop each record at this final time.
    #[arg(long)]
    pub stop_time: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate measurement records (JSON lines).
    Simulate(SimulateArgs),
    /// Compute Fisher information.
    Fisher(FisherArgs),
    /// Maximum-likelihood estimation study.
    Estimate(EstimateArgs),
    /// Compare full and compressed Fisher information.
    Compress(CompressArgs),
    /// Inspect built-in models.
    Model {
        #[command(subcommand)]
        action: ModelAction,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub stop: StopArgs,
    #[arg(long, default_value_t = 100)]
    pub trajectories: usize,
    /// Points of the waiting-time table.
    #[arg(long, default_value_t = 2000)]
    pub grid_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FisherMode {
    Renewal,
    Gillespie,
    Rate,
    Matrix,
    Compressed,
}

#[derive(Debug, Args, Serialize)]
pub struct FisherArgs {
    #[arg(long, value_enum, default_value_t = FisherMode::Renewal)]
    pub mode: FisherMode,
    /// Parameter to estimate; comma separated for the matrix mode.
    #[arg(long)]
    pub param: Option<String>,
    #[command(flatten)]
    pub stop: StopArgs,
    #[arg(long, default_value_t = 1000)]
    pub trajectories: usize,
    /// Time-grid points for t_f-ensemble curves.
    #[arg(long, default_value_t = 101)]
    pub time_points: usize,
    /// Finite-difference step for monitoring operators.
    #[arg(long)]
    pub step: Option<f64>,
    /// Also write per-trajectory scores as JSON lines.
    #[arg(long)]
    pub series: bool,
    /// Sampling epochs for the rate mode.
    #[arg(long, default_value_t = 101)]
    pub epochs: usize,
    #[command(flatten)]
    pub compression: CompressionArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompressionArgs {
    /// Compression applied in the compressed mode.
    #[arg(long, value_name = "MODE")]
    pub compression: Option<String>,
    /// Channels kept under partial monitoring (comma separated).
    #[arg(long)]
    pub retain: Option<String>,
    /// Detector efficiencies `label=eta[,...]` under partial monitoring.
    #[arg(long)]
    pub efficiency: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub param: Option<String>,
    /// Search interval `lo,hi`.
    #[arg(long)]
    pub interval: String,
    /// Records to analyse; simulated at the configured parameters when absent.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[command(flatten)]
    pub stop: StopArgs,
    #[arg(long, default_value_t = 100)]
    pub trajectories: usize,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Channel pair `from,to` for the mean-waiting-time comparison estimator.
    #[arg(long)]
    pub mean_waiting: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompressArgs {
    /// channels-only, times-only, sample-mean or partial-monitoring.
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub param: Option<String>,
    #[command(flatten)]
    pub stop: StopArgs,
    #[arg(long, default_value_t = 1000)]
    pub trajectories: usize,
    #[arg(long)]
    pub retain: Option<String>,
    #[arg(long)]
    pub efficiency: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ModelAction {
    /// Names of the built-in models.
    List,
    /// Parameters, channels and renewal verdict of a model.
    Describe {
        /// Built-in name; defaults to --model or --config.
        name: Option<String>,
    },
}
