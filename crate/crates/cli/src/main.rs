//! `kgadv`: train, evaluate, grid-search and export adversarial
//! knowledge-graph embeddings.
//!
//! Every flag can also be set through a `KGADV_*` environment variable
//! (`--batch` is `KGADV_BATCH`); an explicit flag wins.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgadv_core::advtrain::{SharedBound, TrainConfig};
use kgadv_core::kgdata::SamplingMode;
use kgadv_core::scorers::{Activation, Family, ScorerSpec};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "kgadv", version, about = "Adversarial knowledge-graph embedding", args_override_self = true)]
struct Cli {
    /// Log per-epoch progress to stderr.
    #[arg(short, long, global = true, env = "KGADV_VERBOSE")]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a generator/discriminator pair and write checkpoint, metrics
    /// log and run manifest.
    Train(TrainArgs),
    /// Filtered link-prediction metrics of a checkpoint.
    EvalLp(EvalLpArgs),
    /// Triple-classification accuracy with per-relation thresholds.
    EvalTc(EvalTcArgs),
    /// Grid search over hyperparameters with a fixed epoch budget.
    Grid(GridArgs),
    /// Entity and relation embeddings as `name<TAB>v1<TAB>...<TAB>vk`.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Link prediction; validation metric is filtered MRR.
    Lp,
    /// Triple classification; validation metric is accuracy.
    Tc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    Valid,
    Test,
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// Directory with train.txt, valid.txt and test.txt.
    #[arg(long, env = "KGADV_DATA")]
    pub data: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct ModelArgs {
    /// Generator family: transe, transh, transd, mlp, cnn.
    #[arg(long, env = "KGADV_GN", default_value_t = Family::TransH)]
    pub gn: Family,
    /// Discriminator family.
    #[arg(long, env = "KGADV_DN", default_value_t = Family::Cnn)]
    pub dn: Family,
    /// Embedding dimension.
    #[arg(long, env = "KGADV_K", default_value_t = 100)]
    pub k: usize,
    /// Margin.
    #[arg(long, env = "KGADV_GAMMA", default_value_t = 1.0)]
    pub gamma: f64,
    /// RMSProp learning rate.
    #[arg(long, env = "KGADV_ETA", default_value_t = 0.001)]
    pub eta: f64,
    #[arg(long, env = "KGADV_BATCH", default_value_t = 5000)]
    pub batch: usize,
    #[arg(long, env = "KGADV_WEIGHT_DECAY", default_value_t = 1e-5)]
    pub weight_decay: f64,
    /// Critic updates per generator update.
    #[arg(long, env = "KGADV_NCRITIC", default_value_t = 1)]
    pub ncritic: usize,
    /// Discriminator weight clipping threshold.
    #[arg(long, env = "KGADV_CLIP", default_value_t = 0.01)]
    pub clip: f64,
    /// Convolution filters of a CNN player.
    #[arg(long, env = "KGADV_FILTERS", default_value_t = 100)]
    pub filters: usize,
    /// Convolution window width.
    #[arg(long, env = "KGADV_WIDTH", default_value_t = 3)]
    pub width: usize,
    /// Layers of an MLP player.
    #[arg(long, env = "KGADV_LAYERS", default_value_t = 2)]
    pub layers: usize,
    /// Hidden width of an MLP player.
    #[arg(long, env = "KGADV_HIDDEN", default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, env = "KGADV_ACTIVATION", default_value_t = Activation::Relu)]
    pub activation: Activation,
    #[arg(long, env = "KGADV_EPOCHS", default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, env = "KGADV_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Negative sampling: unif or bern.
    #[arg(long, env = "KGADV_SAMPLING", default_value_t = SamplingMode::Unif)]
    pub sampling: SamplingMode,
    /// Bound on the shared tables: ball, clip or free.
    #[arg(long, env = "KGADV_SHARED", default_value_t = SharedBound::UnitBall)]
    pub shared: SharedBound,
}

impl ModelArgs {
    pub fn config(&self) -> TrainConfig {
        let spec = |base: ScorerSpec| ScorerSpec {
            layers: self.layers,
            hidden: self.hidden,
            filters: self.filters,
            width: self.width,
            activation: self.activation,
            ..base
        };
        TrainConfig {
            k: self.k,
            gamma: self.gamma,
            eta: self.eta,
            batch: self.batch,
            weight_decay: self.weight_decay,
            n_critic: self.ncritic,
            clip: self.clip,
            epochs: self.epochs,
            sampling: self.sampling,
            seed: self.seed,
            gn: spec(ScorerSpec::generator(self.gn)),
            dn: spec(ScorerSpec::discriminator(self.dn)),
            shared: self.shared,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory (created if missing).
    #[arg(long, env = "KGADV_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "KGADV_TASK", value_enum, default_value_t = Task::Lp)]
    pub task: Task,
    /// Validate every N epochs; 0 disables validation.
    #[arg(long, env = "KGADV_EVAL_EVERY", default_value_t = 0)]
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    #[arg(long, env = "KGADV_PATIENCE")]
    pub patience: Option<usize>,
    /// Checkpoint period in epochs (the final epoch is always saved).
    #[arg(long, env = "KGADV_CHECKPOINT_EVERY", default_value_t = 10)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalLpArgs {
    #[arg(long, env = "KGADV_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, env = "KGADV_SPLIT", value_enum, default_value_t = EvalSplit::Test)]
    pub split: EvalSplit,
    /// Also print Hits@1/3, raw ranks and the head/tail split.
    #[arg(long, env = "KGADV_DIAGNOSTICS")]
    pub diagnostics: bool,
    /// Write the metrics as TSV here.
    #[arg(long, env = "KGADV_REPORT")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalTcArgs {
    #[arg(long, env = "KGADV_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Write the threshold table as TSV here instead of stdout.
    #[arg(long, env = "KGADV_THRESHOLDS")]
    pub thresholds: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory; re-running with the same directory resumes.
    #[arg(long, env = "KGADV_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "KGADV_TASK", value_enum, default_value_t = Task::Lp)]
    pub task: Task,
    /// JSON object of value lists (`k`, `gamma`, `eta`, `batch`,
    /// `weight_decay`, `n_critic`, `clip`). Omitted keys keep the flag
    /// value. Without a file the full default grid is searched.
    #[arg(long, env = "KGADV_GRID")]
    pub grid: Option<PathBuf>,
    /// Epochs per candidate; defaults to --epochs.
    #[arg(long, env = "KGADV_BUDGET_EPOCHS")]
    pub budget_epochs: Option<usize>,
    /// Evaluate at most this many new candidates in this invocation.
    #[arg(long, env = "KGADV_MAX_CANDIDATES")]
    pub max_candidates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, env = "KGADV_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory receiving entity_embeddings.tsv and relation_embeddings.tsv.
    #[arg(long, env = "KGADV_OUT")]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::EvalLp(a) => commands::eval_lp(&a),
        Command::EvalTc(a) => commands::eval_tc(&a),
        Command::Grid(a) => commands::grid(&a),
        Command::Export(a) => commands::export(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kgadv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
