//! `scenesync`: generate, corrupt, fit priors, learn hyperparameters,
//! synchronize and evaluate scene layouts.

mod commands;
mod logging;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "scenesync", version, about = "Robust synchronization of noisy scene-object predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw of this command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-scene work (results do not depend on it).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample ground-truth scenes from a grammar.
    Gen(GenArgs),
    /// Fit translation, relative and count priors to a corpus.
    FitPriors(FitArgs),
    /// Simulate noisy node and edge predictions for a corpus.
    Corrupt(CorruptArgs),
    /// Synchronize predictions into a consistent hard scene.
    Optimize(OptimizeArgs),
    /// Learn hyperparameters on a validation set.
    LearnHyper(LearnArgs),
    /// Compare predicted scenes against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value = "bedroom")]
    pub grammar: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Directory of ground-truth scenes.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write default robust hyperparameters for the fitted class table.
    #[arg(long)]
    pub hyper_out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    /// Directory of ground-truth scenes.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from the benchmark noise levels instead of zero noise.
    #[arg(long)]
    pub benchmark: bool,
    #[arg(long)]
    pub sigma_t: Option<f64>,
    #[arg(long)]
    pub sigma_r: Option<f64>,
    #[arg(long)]
    pub sigma_s: Option<f64>,
    #[arg(long)]
    pub p_z: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    /// Predicted scene file, or a directory written by `corrupt`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Edge sidecar; defaults to the one next to a single `--pred` file.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub hyper: PathBuf,
    /// Prior document; required when the hyperparameters do not embed one.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Output scene file, or directory in directory mode.
    #[arg(long)]
    pub out: PathBuf,
    /// Report file for a single scene; directory mode writes one per scene.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    /// Directory written by `corrupt`.
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Ground-truth corpus for the prior regularizer; defaults to the validation ground truth.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Search the default meta grid, scoring on a held-out part of `--val`.
    #[arg(long)]
    pub grid: bool,
    /// Fraction of `--val` held out when `--grid` is set.
    #[arg(long, default_value_t = 0.3)]
    pub heldout: f64,
    /// Optimizer config used to score grid points.
    #[arg(long)]
    pub opt_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = scenesync::metrics::DEFAULT_BINS)]
    pub bins: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    logging::init();
    let res = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::FitPriors(a) => commands::fit_priors(a),
        Command::Corrupt(a) => commands::corrupt(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::LearnHyper(a) => commands::learn_hyper(a),
        Command::Eval(a) => commands::eval(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scenesync: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
