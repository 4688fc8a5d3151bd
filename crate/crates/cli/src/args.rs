//! Command-line arguments. Every option is optional at parse time so that a
//! config file can supply it; defaults are applied after merging.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "nqr", version, about = "Interactive reranking of knowledge graph query answers")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Where to write the run manifest (defaults beside the primary output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random graph, embeddings, candidate queries, a benchmark and base scores.
    SynthKg(SynthKgArgs),
    /// Build a preference benchmark from a graph, embeddings and candidate queries.
    GenData(GenDataArgs),
    /// Train a reranker on the training split.
    Train(TrainArgs),
    /// Train one model per grid point and pick the best on validation.
    Grid(GridArgs),
    /// Tune the cosine baseline on validation.
    TuneCosine(TuneCosineArgs),
    /// Run the interactive protocol and report metrics.
    Eval(EvalArgs),
    /// Rerank one score vector given preferences.
    Rerank(RerankArgs),
    /// Serve the session API.
    Serve(ServeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthKg(_) => "synth-kg",
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Grid(_) => "grid",
            Command::TuneCosine(_) => "tune-cosine",
            Command::Eval(_) => "eval",
            Command::Rerank(_) => "rerank",
            Command::Serve(_) => "serve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    MarginKl,
    Ranknet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RerankerArg {
    Identity,
    Cosine,
    Nqr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

/// Benchmark construction options shared by `synth-kg` and `gen-data`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    /// Preference sets per query.
    #[arg(long)]
    pub per_query: Option<usize>,
    #[arg(long)]
    pub min_answers: Option<usize>,
    #[arg(long)]
    pub max_answers: Option<usize>,
    /// Smallest cluster share of the answers usable as a preference seed.
    #[arg(long)]
    pub min_fraction: Option<f64>,
    /// Share of 1p queries placed in the training split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

/// Planted base-score options.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub mu_true: Option<f64>,
    #[arg(long)]
    pub mu_false: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Min-max normalize every score vector to [0, 1].
    #[arg(long)]
    pub normalize: bool,
    /// Defaults to `--seed`.
    #[arg(long)]
    pub score_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SynthKgArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub communities: Option<usize>,
    #[arg(long)]
    pub heads_per_relation: Option<usize>,
    #[arg(long)]
    pub min_fanout: Option<usize>,
    #[arg(long)]
    pub max_fanout: Option<usize>,
    /// Share of triples withheld from the training graph.
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub queries_1p: Option<usize>,
    #[arg(long)]
    pub queries_per_structure: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub bench: BenchmarkArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub scores: ScoreArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    /// Directory holding the graphs, embeddings and candidate queries.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (defaults to the data directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write planted base scores around the true answers.
    #[arg(long)]
    pub synthetic_scores: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub bench: BenchmarkArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub scores: ScoreArgs,
}

/// Optimization options shared by `train` and `grid`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct OptimArgs {
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train on prefixes of the stored order instead of random subsets.
    #[arg(long)]
    pub prefix_subsets: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GridArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub learning_rates: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub margins: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub kl_weights: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TuneCosineArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Candidate weights, used for both alpha_p and alpha_n.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
}

/// How to build a reranker from flags.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RerankerArgs {
    #[arg(long, value_enum)]
    pub reranker: Option<RerankerArg>,
    /// Trained checkpoint for `--reranker nqr`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub alpha_p: Option<f64>,
    #[arg(long)]
    pub alpha_n: Option<f64>,
    /// `best.json` written by `tune-cosine`; explicit weights win.
    #[arg(long)]
    pub cosine_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Interaction steps per preference set.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Also draw PA and MRR against t as SVG.
    #[arg(long)]
    pub svg: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub reranker: RerankerArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RerankArgs {
    /// Embedding matrix.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// JSON array of base scores.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Data directory to take base scores from, with `--query`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub query: Option<u64>,
    /// JSON array of `{"entity": id, "label": 0|1}`.
    #[arg(long)]
    pub preferences: Option<PathBuf>,
    /// Output JSON array of adjusted scores.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub reranker: RerankerArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
    /// Session store directory; sessions are kept in memory when absent.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// `name=path`, repeatable. A bare path is registered as `default`.
    #[arg(long)]
    pub checkpoint: Option<Vec<String>>,
    #[arg(long)]
    pub alpha_p: Option<f64>,
    #[arg(long)]
    pub alpha_n: Option<f64>,
    #[arg(long)]
    pub cosine_config: Option<PathBuf>,
}
