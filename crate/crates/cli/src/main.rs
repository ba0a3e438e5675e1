use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod manifest;

/// Train, evaluate and inspect joint-graph drug interaction models.
#[derive(Debug, Parser)]
#[command(name = "molbridge", version, about)]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on one fold and save the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Class probabilities for one drug pair.
    Predict(PredictArgs),
    /// Diagnostics: over-smoothing, path-length strata, strongest edges.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Re-execute the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Transductive,
    S1,
    S2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectArg {
    Accuracy,
    MacroF1,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file with smiles_1, smiles_2, label columns.
    #[arg(long)]
    pub data: PathBuf,
    /// key=value file; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Fold index, 0..5.
    #[arg(long)]
    pub fold: Option<usize>,
    /// Seeds initialization, shuffling and the split [default: 42].
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: 500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 512]
    #[arg(long)]
    pub batch: Option<usize>,
    /// [default: 0.005]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden width [default: 64].
    #[arg(long)]
    pub dim: Option<usize>,
    /// FFN width [default: 2 * dim].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// GFormer layers [default: 3].
    #[arg(long)]
    pub layers: Option<usize>,
    /// Attention heads [default: 4].
    #[arg(long)]
    pub heads: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Validation metric for model selection [default: accuracy].
    #[arg(long, value_enum)]
    pub select: Option<SelectArg>,
    /// Run directory [default: $MOLBRIDGE_OUT/train-<millis>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Split mode [default: the one recorded in the checkpoint].
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to true labels in this subset, e.g. "0-3" or "35-64,70".
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    pub smiles_1: String,
    pub smiles_2: String,
    /// Print only the k most likely classes.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Cosine similarity of node embeddings against depth, plain vs GFormer.
    Oversmooth(OversmoothArgs),
    /// Metrics stratified by average shortest-path length.
    Distance(DistanceArgs),
    /// Heaviest cross-molecular attention weights for a pair.
    Edges(EdgesArgs),
}

#[derive(Debug, Args)]
pub struct OversmoothArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    pub quantiles: usize,
    /// Use the first drug's path length instead of the pair mean.
    #[arg(long)]
    pub first_drug: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EdgesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    pub smiles_1: String,
    pub smiles_2: String,
    #[arg(short, long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Run directory for the replay [default: a fresh one].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Bad invocation rather than a runtime failure; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|e| e.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
