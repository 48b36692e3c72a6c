use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "adoirt", version, about = "Amortised adaptive testing for the Rasch model")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a students-by-items response dataset.
    GenerateData,
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Fit an item bank to a response dataset.
    Calibrate(CalibrateArgs),
    /// Score trained checkpoints against baselines.
    Benchmark(BenchmarkArgs),
    /// Write per-panel CSV files from benchmark results.
    ExportFigures(ExportArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
    /// Run one episode and write its trace.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Conceal outcomes until the last item (non-adaptive baseline).
    #[arg(long)]
    pub non_adaptive: bool,
    #[arg(long)]
    pub updates: Option<usize>,
    /// Write an intermediate checkpoint every this many updates.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Write the true difficulties instead of fitting them.
    #[arg(long)]
    pub true_bank: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// ADOIRT checkpoints, one per training seed.
    #[arg(long, num_args = 1.., required = true)]
    pub adoirt: Vec<PathBuf>,
    /// Non-adaptive checkpoints with the same seeds, in the same order.
    #[arg(long, num_args = 1..)]
    pub non_adaptive: Vec<PathBuf>,
    /// Replaces the configured dataset and episode counts.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Use each dataset's true difficulties as the bank instead of a fit.
    #[arg(long)]
    pub true_banks: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory holding `results_*.json` from `benchmark`.
    #[arg(long)]
    pub results: PathBuf,
    /// Training stats CSVs, one per seed in benchmark seed order.
    #[arg(long, num_args = 1..)]
    pub stats: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Persist session events here and replay them at startup.
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Map designs onto this bank instead of the checkpoint's corruption.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Student ability; drawn from the prior when omitted.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Scripted outcomes such as `0110101101`, one per item.
    #[arg(long)]
    pub outcomes: Option<String>,
}
