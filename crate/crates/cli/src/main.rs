//! `radu`: simulate ToF datasets, train and adapt the denoiser, evaluate and
//! run inference.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "radu", version, about = "Time-of-flight depth denoising with ray-aligned depth updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-path dataset.
    Simulate(SimulateArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Adapt a trained model to unlabeled target data by self-training.
    Adapt(AdaptArgs),
    /// Report MAE and relative error per split.
    Eval(EvalArgs),
    /// Write predicted distance maps.
    Infer(InferArgs),
    /// Compare every backward rule against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Domain {
    Source,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelPreset {
    Default,
    /// Half-width channels for single-core budgets.
    Desk,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    /// Fan-based random weights.
    Random,
    /// Output equals the pooled input distance.
    Passthrough,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenes: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "source")]
    domain: Domain,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// Override the indirect gain range as LO:HI.
    #[arg(long, value_parser = parse_range)]
    g_mpi: Option<(f64, f64)>,
    /// Store observations without sensor noise.
    #[arg(long)]
    noise_free: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "default")]
    model: ModelPreset,
    /// JSON model configuration; overrides --model.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "random")]
    init: Init,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory for checkpoints and metrics.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Start from an existing checkpoint instead of a fresh model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Learning-rate multiplier per 100 epochs.
    #[arg(long, default_value_t = 0.1)]
    decay: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    l1_only: bool,
    #[arg(long)]
    no_augment: bool,
    /// Random training crop as HxW.
    #[arg(long, value_parser = parse_size)]
    crop: Option<(usize, usize)>,
    /// Limit the number of training scenes.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled source dataset.
    #[arg(long)]
    source: PathBuf,
    /// Target dataset; its labels are never read.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 20)]
    n_cycle: usize,
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    /// Learning-rate multiplier per 100 epochs.
    #[arg(long, default_value_t = 0.1)]
    decay: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    l1_only: bool,
    #[arg(long)]
    no_augment: bool,
    /// Random training crop as HxW.
    #[arg(long, value_parser = parse_size)]
    crop: Option<(usize, usize)>,
    /// Draw source or target once per batch instead of per sample.
    #[arg(long)]
    whole_batch: bool,
    /// Target split used for pseudo-labeling.
    #[arg(long, default_value = "train")]
    target_split: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint to evaluate; required unless --predictions is given.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory written by `infer`; scores the saved maps.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Comma-separated splits.
    #[arg(long, default_value = "val,test", value_delimiter = ',')]
    splits: Vec<String>,
    /// CSV report path.
    #[arg(long)]
    report: PathBuf,
    /// Directory for per-sample PFM error maps.
    #[arg(long)]
    maps: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test", value_delimiter = ',')]
    splits: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = radu_core::verify::DEFAULT_SEED)]
    seed: u64,
    /// Optional JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW, e.g. 64x64")?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height {h:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width {w:?}"))?;
    if h == 0 || w == 0 {
        return Err("size must be positive".into());
    }
    Ok((h, w))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad bound {a:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad bound {b:?}"))?;
    Ok((a, b))
}

/// Process exit codes.
pub mod exit {
    pub const RUNTIME: u8 = 1;
    pub const VERIFICATION: u8 = 3;
}

pub enum Failure {
    Runtime(anyhow::Error),
    Verification(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<radu_core::Error> for Failure {
    fn from(e: radu_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train(a),
        Command::Adapt(a) => commands::adapt(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit::RUNTIME)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(exit::VERIFICATION)
        }
    }
}
