//! `lacon`: train, evaluate, sample, sweep and inspect label-anchored
//! contrastive text classifiers.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes: 0 ok, 1 configuration, 2 data, 3 training, 4 checkpoint.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn checkpoint(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<lacon::Error> for Failure {
    fn from(e: lacon::Error) -> Self {
        use lacon::Error::*;
        let code = match &e {
            ConfigInvalid(_) | SpecInvalid(_) => 1,
            Parse { .. }
            | MissingField { .. }
            | UnknownLabel { .. }
            | EmptyText(_)
            | EmptyDataset
            | DuplicateLabel(_)
            | InsufficientClassCount { .. }
            | NotBinary(_)
            | SingleClass
            | LengthMismatch(..)
            | Io { .. } => 2,
            CheckpointMismatch(_) | CheckpointFormat(_) => 4,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "lacon", version, about = "Label-anchored contrastive learning for text classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one or more seeded runs and write metrics, checkpoint and config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Draw a few-shot or imbalanced sample from a dataset.
    Sample(SampleArgs),
    /// Grid search over tau, lambda, head count and batch size.
    Sweep(SweepArgs),
    /// Spectrum, alignment and uniformity of learned representations.
    Diagnose(DiagnoseArgs),
    /// Write instance and label embeddings as CSV.
    Export(ExportArgs),
    /// Generate a synthetic keyword corpus.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Shared {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSONL dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Labels sidecar, one class name per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

/// One flag per configuration key; values are parsed like the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigFlags {
    #[arg(long, allow_hyphen_values = true)]
    pub mode: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub learning_rate: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub batch_size: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub epochs: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub warmup_fraction: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub weight_decay: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub runs: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub dev_fraction: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub patience: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub clip_norm: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub dim: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub kernel_width: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub max_len: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub task_metric: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub heads: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub enable_icl: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub enable_lcl: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub enable_ler: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub multihead: Option<String>,
}

impl ConfigFlags {
    pub fn pairs(&self) -> Vec<(&'static str, &String)> {
        let fields: [(&'static str, &Option<String>); 21] = [
            ("mode", &self.mode),
            ("learning_rate", &self.learning_rate),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("warmup_fraction", &self.warmup_fraction),
            ("weight_decay", &self.weight_decay),
            ("runs", &self.runs),
            ("dev_fraction", &self.dev_fraction),
            ("patience", &self.patience),
            ("clip_norm", &self.clip_norm),
            ("dim", &self.dim),
            ("kernel_width", &self.kernel_width),
            ("max_len", &self.max_len),
            ("task_metric", &self.task_metric),
            ("tau", &self.tau),
            ("lambda", &self.lambda),
            ("heads", &self.heads),
            ("enable_icl", &self.enable_icl),
            ("enable_lcl", &self.enable_lcl),
            ("enable_ler", &self.enable_ler),
            ("multihead", &self.multihead),
        ];
        fields.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Explicit dev split; without it a stratified fraction of the training data is held out.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Test split evaluated with each run's best checkpoint.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `all` evaluates every row; `dev` only the rows held out during training.
    #[arg(long, default_value = "all")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// Few-shot: examples per class for each of train and dev.
    #[arg(long, conflicts_with = "rho")]
    pub k: Option<usize>,
    /// Imbalance degree: 32 minority and 32·rho majority examples.
    #[arg(long)]
    pub rho: Option<usize>,
    /// Class name to use as the minority (imbalance only).
    #[arg(long, requires = "rho")]
    pub minority: Option<String>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Comma-separated temperatures (default 0.05..0.50 step 0.05).
    #[arg(long)]
    pub taus: Option<String>,
    /// Comma-separated regularizer weights (default 0.1..1.0 step 0.1).
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Comma-separated head counts (default: divisors of dim).
    #[arg(long)]
    pub heads_grid: Option<String>,
    /// Comma-separated batch sizes (default: the configured batch size).
    #[arg(long)]
    pub batch_sizes: Option<String>,
    /// Seeds per grid point.
    #[arg(long, default_value_t = lacon::sweep::DEFAULT_SWEEP_RUNS)]
    pub sweep_runs: usize,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Embeddings CSV from `export`; alternative to --checkpoint with --dataset.
    #[arg(long, conflicts_with = "checkpoint")]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "all")]
    pub split: String,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub vocab_per_class: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sample(a) => commands::sample(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Export(a) => commands::export(a),
        Command::Synth(a) => commands::synth(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
