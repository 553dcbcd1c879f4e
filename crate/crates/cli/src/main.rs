mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use psychocal::dataio::DataError;
use psychocal::difficulty::PipelineError;
use psychocal::irt::IrtError;
use psychocal::pairs::MiningError;
use psychocal::prompt::TemplateError;
use psychocal::sim::{BackendError, SimError};

/// Usage or environment problem; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "psychocal", version, about = "Simulation-based item difficulty calibration")]
struct Cli {
    /// Run configuration (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate a GPCM on scored responses.
    FitIrt(FitArgs),
    /// Build preference pairs from real responses under a fitted model.
    MinePairs(MineArgs),
    /// Generate and score responses for a simulated population.
    Simulate(SimulateArgs),
    /// Refit on real plus simulated responses and predict unseen difficulties.
    PredictDifficulty(PredictArgs),
    /// Compute evaluation metrics.
    Evaluate(EvaluateArgs),
    /// Build difficulty-striped cross-validation folds.
    SplitFolds(FoldArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Items file; supplies passages and questions for the prompts.
    #[arg(long)]
    pub items: Option<PathBuf>,
    /// Prompt template with `{passage}`, `{question}` and `{ability}`.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BackendKind {
    Synthetic,
    Subprocess,
    Http,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub items: PathBuf,
    /// Calibrated parameters; their abilities define the population.
    #[arg(long)]
    pub params: PathBuf,
    /// Simulation plan or full run configuration (JSON).
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    pub backend: BackendKind,
    /// Ground-truth parameters for the synthetic backend.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Flip probability of the noisy synthetic scorer.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Worker command for the subprocess backend, split on whitespace.
    #[arg(long)]
    pub worker: Option<String>,
    #[arg(long)]
    pub url: Option<String>,
    #[arg(long)]
    pub population_size: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub train_responses: PathBuf,
    #[arg(long)]
    pub sim_responses: PathBuf,
    #[arg(long)]
    pub calibrated: PathBuf,
    /// Items file; every item absent from the train responses must then be
    /// covered by the simulation.
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions CSV (`item_id,raw,normalized`).
    #[arg(long)]
    pub pred: PathBuf,
    /// True difficulties: CSV `item_id,difficulty` or a parameters JSON.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub sim_responses: Option<PathBuf>,
    /// Embeddings of ground-truth responses, one JSONL row per response.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Embeddings of simulated responses; read from synthetic envelopes
    /// when omitted.
    #[arg(long)]
    pub sim_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub difficulties: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub buckets: Option<usize>,
    /// Train, validation and test sizes, e.g. `29,10,10`.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() || cause.is::<BackendError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return if matches!(e, DataError::Io { .. } | DataError::Config(_)) { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<IrtError>() {
            return irt_code(e);
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Irt(e) => irt_code(e),
                PipelineError::Domain(_) => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<MiningError>() {
            return match e {
                MiningError::Io { .. } | MiningError::InvalidConfig(_) | MiningError::Template(_) => 1,
                MiningError::Irt(e) => irt_code(e),
                _ => 2,
            };
        }
        if cause.is::<TemplateError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return match e {
                SimError::Domain(_) => 2,
                SimError::InvalidPlan(_) | SimError::ItemFailed { .. } => 1,
            };
        }
    }
    2
}

fn irt_code(e: &IrtError) -> u8 {
    match e {
        IrtError::Io { .. } | IrtError::InvalidConfig(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PSYCHOCAL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = commands::load_config(cli.config.as_deref(), cli.seed).and_then(|config| match cli.command {
        Command::FitIrt(args) => commands::fit_irt(config, args),
        Command::MinePairs(args) => commands::mine_pairs(config, args),
        Command::Simulate(args) => commands::simulate(config, args),
        Command::PredictDifficulty(args) => commands::predict_difficulty(config, args),
        Command::Evaluate(args) => commands::evaluate(config, args),
        Command::SplitFolds(args) => commands::split_folds(config, args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
