use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stepground_core::grpo::{KlEstimator, SimConfig};
use stepground_core::service::{AlignOverrides, RewardOverrides};
use stepground_core::BaselinePool;

#[derive(Debug, Parser)]
#[command(
    name = "stepground",
    version,
    about = "Ground procedural step sequences in a narration corpus"
)]
pub struct Cli {
    /// Emit diagnostics on stderr as JSON lines.
    #[arg(long, global = true, env = "STEPGROUND_JSON")]
    pub json: bool,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or inspect a corpus index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Align step sequences against an index.
    #[command(subcommand)]
    Align(AlignCommand),
    /// Score a file of requests offline.
    Score(ScoreArgs),
    /// Run the reward server.
    Serve(ServeArgs),
    /// Ask a running server for its health summary.
    Probe(ProbeArgs),
    /// Train the toy policy against the grounding reward.
    Simulate(SimulateArgs),
    /// Aggregate a judged transcript into macro accuracy.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Ingest narrations and write an index directory.
    Build(BuildArgs),
}

#[derive(Debug, Subcommand)]
pub enum AlignCommand {
    /// Grounding score of one step sequence.
    Score(AlignScoreArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Narration records, one JSON object per line.
    #[arg(long)]
    pub narrations: PathBuf,
    /// Precomputed segment vectors; segments are embedded when omitted.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Tag recorded for precomputed vectors.
    #[arg(long, default_value = "precomputed", requires = "embeddings")]
    pub embedder_tag: String,
    /// Hash embedder dimension.
    #[arg(long, default_value_t = 64, env = "STEPGROUND_DIM")]
    pub dim: usize,
    /// Hash embedder seed.
    #[arg(long, default_value_t = 7, env = "STEPGROUND_EMBED_SEED")]
    pub embed_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct IndexArg {
    /// Index directory written by `index build`.
    #[arg(long, env = "STEPGROUND_INDEX")]
    pub index: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlignScoreArgs {
    #[command(flatten)]
    pub index: IndexArg,
    /// One step; repeat for a sequence.
    #[arg(long = "step")]
    pub steps: Vec<String>,
    /// JSON array of step strings.
    #[arg(long, conflicts_with = "steps")]
    pub steps_file: Option<PathBuf>,
    #[command(flatten)]
    pub align: AlignFlags,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct AlignFlags {
    #[arg(long, env = "STEPGROUND_TOP_K")]
    pub top_k: Option<usize>,
    #[arg(long, env = "STEPGROUND_GAP_PENALTY", allow_hyphen_values = true)]
    pub gap_penalty: Option<f64>,
}

impl AlignFlags {
    pub fn overrides(&self) -> AlignOverrides {
        AlignOverrides {
            top_k: self.top_k,
            gap_penalty: self.gap_penalty,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Independent,
    Shared,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct RewardFlags {
    #[arg(long, env = "STEPGROUND_TAU")]
    pub tau: Option<f64>,
    #[arg(long, env = "STEPGROUND_ALPHA")]
    pub alpha: Option<f64>,
    #[arg(long, env = "STEPGROUND_EPS")]
    pub eps: Option<f64>,
    /// Pool the history baseline is scored against.
    #[arg(long, value_enum, env = "STEPGROUND_BASELINE")]
    pub baseline: Option<BaselineArg>,
}

impl RewardFlags {
    pub fn overrides(&self) -> RewardOverrides {
        RewardOverrides {
            tau: self.tau,
            alpha: self.alpha,
            eps: self.eps,
            baseline: self.baseline.map(|b| match b {
                BaselineArg::Independent => BaselinePool::Independent,
                BaselineArg::Shared => BaselinePool::Shared,
            }),
        }
    }
}

#[derive(Debug, Args)]
pub struct EngineFlags {
    #[command(flatten)]
    pub index: IndexArg,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, env = "STEPGROUND_WORKERS")]
    pub workers: Option<usize>,
    /// Cap on history plus completion steps per request.
    #[arg(long, default_value_t = stepground_core::service::DEFAULT_MAX_STEPS, env = "STEPGROUND_MAX_STEPS")]
    pub max_steps: usize,
    #[command(flatten)]
    pub align: AlignFlags,
    #[command(flatten)]
    pub reward: RewardFlags,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub engine: EngineFlags,
    /// Request lines; `-` reads standard input.
    #[arg(long)]
    pub requests: PathBuf,
    /// Response lines; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report measured timing_ms instead of 0.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineFlags,
    #[arg(long, default_value = "127.0.0.1:7878", env = "STEPGROUND_BIND")]
    pub bind: String,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, default_value = "127.0.0.1:7878", env = "STEPGROUND_ADDR")]
    pub addr: String,
    #[arg(long, default_value_t = 2000, env = "STEPGROUND_TIMEOUT_MS")]
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KlArg {
    K3,
    Exact,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, env = "STEPGROUND_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Narration records in the synthetic corpus.
    #[arg(long)]
    pub narrations: Option<usize>,
    #[arg(long)]
    pub prompts: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub kl_beta: Option<f64>,
    #[arg(long, value_enum)]
    pub kl_estimator: Option<KlArg>,
    #[arg(long)]
    pub clip_ratio: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Directory for curve.csv and summary.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub align: AlignFlags,
    #[command(flatten)]
    pub reward: RewardFlags,
}

impl SimulateArgs {
    pub fn config(&self) -> SimConfig {
        let d = SimConfig::default();
        SimConfig {
            group_size: self.group_size.unwrap_or(d.group_size),
            kl_beta: self.kl_beta.unwrap_or(d.kl_beta),
            kl_estimator: match self.kl_estimator {
                Some(KlArg::K3) => KlEstimator::K3,
                Some(KlArg::Exact) => KlEstimator::Exact,
                None => d.kl_estimator,
            },
            clip_ratio: self.clip_ratio.unwrap_or(d.clip_ratio),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            iterations: self.iterations.unwrap_or(d.iterations),
            seed: self.seed.unwrap_or(d.seed),
            horizon: self.horizon.unwrap_or(d.horizon),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            n_narrations: self.narrations.unwrap_or(d.n_narrations),
            n_prompts: self.prompts.unwrap_or(d.n_prompts),
            temperature: self.temperature.unwrap_or(d.temperature),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Judged transcript, one JSON object per line.
    #[arg(long)]
    pub transcript: PathBuf,
    /// JSON object mapping each split to its ordered datasets.
    #[arg(long)]
    pub splits: PathBuf,
    /// Row label in the CSV table.
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}
