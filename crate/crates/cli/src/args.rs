use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use visdep_core::filter::FilterStrategy;
use visdep_core::model::OptimizerKind;
use visdep_core::LossMode;

#[derive(Debug, Parser)]
#[command(name = "visdep", version, about = "Visual-dependence analysis, re-weighted training and hallucination evaluation")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory that receives artifacts [default: visdep-out].
    #[arg(long, global = true, env = "VISDEP_OUT")]
    pub out_dir: Option<PathBuf>,

    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its held-out test split.
    Synth(SynthArgs),
    /// Train the toy captioner.
    Train(TrainArgs),
    /// Generate captions for the test split and score hallucination.
    Eval(EvalArgs),
    /// Per-token visual dependence as CSV.
    Analyze(AnalyzeArgs),
    /// Score a corpus by total dependence and drop a fraction of it.
    Filter(FilterArgs),
    /// Train and evaluate once per value of one hyperparameter.
    Sweep(SweepArgs),
    /// Render bar charts for traces and a histogram of corpus scores.
    Plot(PlotArgs),
    /// Re-run the command recorded in a run.json.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub scenes: usize,
    #[arg(long, default_value_t = 40)]
    pub vocab_objects: usize,
    /// Probability that an absent bias partner is mentioned after its trigger.
    #[arg(long, default_value_t = visdep_core::synth::DEFAULT_HALLUCINATION_RATE)]
    pub hallucination_rate: f64,
    /// Per-pair co-occurrence probability for the default bias pairs.
    #[arg(long, default_value_t = visdep_core::synth::DEFAULT_PAIR_PROBABILITY)]
    pub pair_prob: f64,
    #[arg(long, default_value_t = visdep_core::synth::DEFAULT_JITTER)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Mle,
    Wneg,
    Wpos,
}

impl From<LossArg> for LossMode {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mle => LossMode::Vanilla,
            LossArg::Wneg => LossMode::EmphasizeNegative,
            LossArg::Wpos => LossMode::EmphasizePositive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainingFlags {
    #[arg(long, value_enum, default_value_t = LossArg::Mle)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Fraction of training after which re-weighting starts.
    #[arg(long, default_value_t = 0.5)]
    pub start_frac: f64,
    /// Allow the end-of-sequence weight to drop below 1.
    #[arg(long)]
    pub no_eos_floor: bool,
    /// Diffusion step used to corrupt the condition when measuring dependence.
    #[arg(long, default_value_t = 900)]
    pub noise_step: usize,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Probability of training a caption against its corrupted feature.
    #[arg(long, default_value_t = visdep_core::model::train::DEFAULT_NOISE_AUGMENT)]
    pub noise_augment: f64,
    #[arg(long, default_value_t = 32)]
    pub d_emb: usize,
    #[arg(long, default_value_t = 64)]
    pub d_hid: usize,
    /// Global gradient-norm clip; 0 disables it.
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Training corpus; defaults to <out-dir>/corpus.jsonl.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialisation.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalFlags {
    /// Longest generated caption in tokens, including <bos>.
    #[arg(long, default_value_t = visdep_core::pipeline::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Co-occurrence window in tokens.
    #[arg(long, default_value_t = visdep_core::halleval::DEFAULT_WINDOW)]
    pub window: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoint; defaults to <out-dir>/ckpt.json.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Test scenes; defaults to <out-dir>/test.jsonl.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 900)]
    pub noise_step: usize,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Trace file to analyse. Without it, captions of --corpus are scored
    /// teacher-forced under --ckpt.
    #[arg(long, conflicts_with_all = ["ckpt", "corpus"])]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 900)]
    pub noise_step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Highest,
    Lowest,
    Random,
}

impl From<StrategyArg> for FilterStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Highest => FilterStrategy::RemoveHighest,
            StrategyArg::Lowest => FilterStrategy::RemoveLowest,
            StrategyArg::Random => FilterStrategy::RemoveRandom,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Scoring model; defaults to <out-dir>/ckpt.json.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 0.1)]
    pub frac: f64,
    #[arg(long, default_value_t = 900)]
    pub noise_step: usize,
    /// Average each score over this many noise draws.
    #[arg(long, default_value_t = 1)]
    pub noise_draws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Tau,
    StartFrac,
    NoiseStep,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated values, e.g. 0.25,0.5,1.0,1.5.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlotArgs {
    /// Per-token CSV written by `analyze`.
    #[arg(long, required_unless_present = "scores")]
    pub analysis: Option<PathBuf>,
    /// Score CSV written by `filter`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Plot at most this many traces.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    pub run_json: PathBuf,
}
