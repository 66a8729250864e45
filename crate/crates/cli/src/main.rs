//! `zps`: score candidate prompts with a frozen model and pick one without
//! gold labels.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use zps_core::{EnsembleStrategy, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "zps", version, about = "Select prompts without gold labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every prompt and select one by pseudo accuracy.
    Select(RunArgs),
    /// Select, then score the selection against gold labels.
    Evaluate(RunArgs),
    /// Run the adversarial-prompt and ensemble-strategy simulations.
    Simulate(SimulateArgs),
    /// Export pseudo-labeled examples for validation or training.
    PseudoVal(PseudoValArgs),
    /// Pick the checkpoint whose predictions best match a pseudo-val set.
    SelectCheckpoint(CheckpointArgs),
    /// Fill the score cache and optionally write the score tensor.
    Score(ScoreArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Remote,
    Synthetic,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Task and prompt catalog (JSON).
    #[arg(long)]
    pub catalog: PathBuf,
    /// Examples (JSON Lines).
    #[arg(long)]
    pub examples: PathBuf,
    #[arg(long, value_enum, default_value = "remote")]
    pub backend: BackendKind,
    /// Scoring endpoint for the remote backend. The bearer token, if any,
    /// is read from ZPS_API_TOKEN.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the remote backend.
    #[arg(long)]
    pub model: Option<String>,
    /// Items per remote request.
    #[arg(long, default_value_t = 16)]
    pub max_batch: usize,
    /// Score cache (JSON Lines); created if missing.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Delete the cache file before scoring.
    #[arg(long)]
    pub reset_cache: bool,
    #[arg(long, default_value = "logprob_mean", value_parser = parse_strategy)]
    pub strategy: EnsembleStrategy,
    /// softmax or none.
    #[arg(long, default_value = "softmax")]
    pub normalize: String,
    /// Divide phrase scores by their token count.
    #[arg(long, value_enum, default_value = "off")]
    pub length_norm: Switch,
    /// Skip confidence filtering.
    #[arg(long)]
    pub no_filter: bool,
    /// Also report pseudo accuracy of filtered-out prompts.
    #[arg(long)]
    pub score_all_prompts: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Synthetic backend: per-prompt quality as ID=Q (repeatable).
    #[arg(long = "quality", value_name = "ID=Q")]
    pub qualities: Vec<String>,
    /// Synthetic backend: quality for prompts without --quality.
    #[arg(long, default_value_t = 0.7)]
    pub default_quality: f64,
    /// Synthetic backend: probability that prompts share an example's
    /// correctness draw.
    #[arg(long)]
    pub shared_difficulty: Option<f64>,
    /// Output file; stdout gets a human-readable summary either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for scoring.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Simulation spec (JSON). The bundled default is used when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Print the bundled default spec and exit.
    #[arg(long)]
    pub print_default_spec: bool,
    /// Override the spec's ensemble strategy.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<EnsembleStrategy>,
    /// Override the spec and skip confidence filtering.
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PseudoValArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Keep the SIZE most confident examples (default: all).
    #[arg(long, conflicts_with = "top_k")]
    pub size: Option<usize>,
    /// Export the K most confident examples as a pseudo-training set.
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    /// Checkpoint predictions (JSON Lines).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Pseudo-labeled validation set (JSON Lines).
    #[arg(long)]
    pub pseudo_val: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

fn parse_strategy(s: &str) -> Result<EnsembleStrategy, String> {
    s.parse().map_err(|e: zps_core::Error| e.to_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<zps_core::Error>().map(zps_core::Error::kind) {
        Some(ErrorKind::Backend) => 2,
        Some(ErrorKind::Internal) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Select(args) => commands::select(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::PseudoVal(args) => commands::pseudo_val(&args),
        Command::SelectCheckpoint(args) => commands::select_checkpoint(&args),
        Command::Score(args) => commands::score(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
