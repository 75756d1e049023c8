//! `coordconv-lab`: dataset generation, training runs, sweeps, reports and
//! a self-test for the coordinate-transform experiments.
//!
//! Exit codes: 0 success, 1 I/O or artifact failure, 2 usage error,
//! 3 training divergence, 4 selftest failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coordconv_core::dataset::SplitKind;
use coordconv_core::models::{ModelName, Task};

mod commands;
mod error;
mod files;
mod manifest;

#[derive(Parser, Debug)]
#[command(name = "coordconv-lab", version, about = "CoordConv coordinate-transform experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the dataset, both splits and pixelwise split sums as PGM.
    Dataset(DatasetArgs),
    /// Train one model on one split.
    Train(TrainArgs),
    /// Run every combination in a JSON grid and rank the results.
    Sweep(SweepArgs),
    /// Compare finished runs and render prediction heatmaps.
    Report(ReportArgs),
    /// Gradient checks, oracle equivalences and a short deterministic run.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Output directory.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    /// Seed of the uniform split.
    #[arg(long, default_value_t = 0)]
    pub seed: u32,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// cls, reg or ren.
    pub task: Task,
    /// One of CC-CLS, DECONV-CLS, CC-REG, CONV-REG-U, CONV-REG-Q, CC-REN, DECONV-REN.
    pub model: ModelName,
    /// uniform or quadrant.
    pub split: SplitKind,
    /// JSON training config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay.
    #[arg(long)]
    pub wd: Option<f64>,
    /// Minibatch size (16 or 32).
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds initialization, shuffling and the uniform split.
    #[arg(long)]
    pub seed: Option<u32>,
    /// Epochs at which the learning rate decays, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub milestones: Option<Vec<usize>>,
    /// Epochs with a perfect running train metric before stopping; 0 never stops.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Full train/test evaluation every N epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Append a radius channel to every CoordConv layer.
    #[arg(long)]
    pub with_r: bool,
    /// Deconv filter size.
    #[arg(long)]
    pub fs: Option<usize>,
    /// Deconv channel multiplier.
    #[arg(long)]
    pub c_mult: Option<usize>,
    /// Dataset file written by `dataset`; generated in memory when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Split file written by `dataset`; derived from the seed when absent.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    /// Run directory; defaults to runs/<model>-<split>-s<seed>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// JSON grid file.
    pub grid: PathBuf,
    /// Keep only models of this task.
    #[arg(long)]
    pub task: Option<Task>,
    /// Keep only models whose name is this or starts with it (CC, CONV, DECONV, ...).
    #[arg(long)]
    pub family: Option<String>,
    /// Concurrent training jobs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories produced by `train`.
    #[arg(required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Test examples (in split order) to dump logit maps for.
    #[arg(long, default_value_t = 2)]
    pub examples: usize,
    /// Logit window around each example's center, ROWSxCOLS.
    #[arg(long, default_value = "5x9")]
    pub window: String,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u32,
    /// Randomized trials per operator gradient check.
    #[arg(long, default_value_t = 100)]
    pub trials: u32,
    /// Directory for the training-run metrics CSV.
    #[arg(long, default_value = "selftest")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Dataset(a) => commands::dataset::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Sweep(a) => commands::sweep::run(&a),
        Command::Report(a) => commands::report::run(&a),
        Command::Selftest(a) => commands::selftest::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("coordconv-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
