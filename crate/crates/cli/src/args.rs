use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coffee_core::{alignment, coffee, topicmetrics};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "coffee", version, about = "Topic-model evaluation and bootstrapped covariate effects")]
pub struct Cli {
    /// Root of the output tree; runs land in <out>/<command>/<tag>/
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Run directory name (default: UTC timestamp)
    #[arg(long, global = true)]
    pub tag: Option<String>,

    /// Worker threads (default: all cores). Never changes results.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// More log output on stderr (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a topic/theta/covariate bundle for consistency
    Validate(ValidateArgs),
    /// Tokenize raw text and merge frequent collocations
    Preprocess(PreprocessArgs),
    /// Coherence, uniqueness and diversity over triplet-matched topics
    Quality(QualityArgs),
    /// Match topics across models by keyword embedding similarity
    Align(AlignArgs),
    /// Bootstrapped sum-contrast effects of a covariate on topic prevalence
    Effects(EffectsArgs),
    /// Write a synthetic bundle with known effects
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Preprocess(_) => "preprocess",
            Command::Quality(_) => "quality",
            Command::Align(_) => "align",
            Command::Effects(_) => "effects",
            Command::Synth(_) => "synth",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BundleArgs {
    /// Bundle manifest (paths inside resolve relative to it)
    #[arg(long, conflicts_with_all = ["topics", "theta", "covariates"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, requires_all = ["theta", "covariates"])]
    pub topics: Option<PathBuf>,
    #[arg(long)]
    pub theta: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// θ rows must already sum to one (implied by a manifest that says so)
    #[arg(long)]
    pub normalized: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PreprocessArgs {
    /// CSV with doc_id,text
    #[arg(long)]
    pub input: PathBuf,
    /// One stopword per line; may be repeated
    #[arg(long)]
    pub stopwords: Vec<PathBuf>,
    /// Corpus-specific stopwords, one per line; may be repeated
    #[arg(long)]
    pub domain_stopwords: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub min_token_len: usize,
    #[arg(long, default_value_t = 10.0)]
    pub ngram_threshold: f64,
    #[arg(long, default_value_t = 5.0)]
    pub ngram_discount: f64,
    #[arg(long, default_value_t = 2)]
    pub ngram_passes: u8,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct QualityArgs {
    /// topics.csv holding every model to evaluate
    #[arg(long)]
    pub topics: PathBuf,
    /// Tokenized corpus (doc_id,tokens) used as the co-occurrence reference
    #[arg(long)]
    pub corpus: PathBuf,
    /// Alignment written by `align`; otherwise one is computed from --embeddings
    #[arg(long, required_unless_present = "embeddings")]
    pub alignment: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = alignment::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = alignment::DEFAULT_TOP_K_KEYWORDS)]
    pub top_k_embed: usize,
    #[arg(long, default_value_t = topicmetrics::DEFAULT_TOP_N)]
    pub top_n_metric: usize,
    #[arg(long, default_value_t = coffee_core::corpusstats::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Count co-occurrence in sliding windows of this many tokens instead of whole documents
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AlignArgs {
    /// topics.csv holding every model to align
    #[arg(long)]
    pub topics: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = alignment::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = alignment::DEFAULT_TOP_K_KEYWORDS)]
    pub top_k_embed: usize,
    /// Drop keywords without an embedding instead of failing
    #[arg(long)]
    pub skip_missing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EffectsArgs {
    #[command(flatten)]
    pub bundle: BundleArgs,
    /// Covariate column to regress on
    #[arg(long)]
    pub covariate: String,
    #[arg(long, default_value_t = coffee::DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relabel categories with fewer documents as "Other". Given without a
    /// value the threshold is 1000; absent, nothing is merged.
    #[arg(long, num_args = 0..=1, default_missing_value = "1000")]
    pub merge_threshold: Option<usize>,
    #[arg(long, default_value_t = coffee::DEFAULT_MIN_FEASIBLE)]
    pub min_feasible: usize,
    /// Rescale θ rows to sum to one before fitting
    #[arg(long)]
    pub renormalize_theta: bool,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n_docs: usize,
    #[arg(long, default_value_t = 4)]
    pub n_topics: usize,
    /// Category shares as label:share pairs
    #[arg(long, value_delimiter = ',', default_value = "A:0.5,B:0.3,C:0.2")]
    pub categories: Vec<String>,
    /// Mean shift as category:topic:shift; may be repeated. Each category's
    /// shifts must sum to zero.
    #[arg(long = "effect")]
    pub effects: Vec<String>,
    #[arg(long, default_value_t = coffee_core::synthgen::DEFAULT_CONCENTRATION)]
    pub concentration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "group")]
    pub covariate: String,
}
