//! The `curator` command-line front end.
//!
//! Subcommands cover the whole workflow: `aggregate` votes into labels,
//! `embed` documents into a vector store, `train` a scoring head, `eval`
//! heads against ground truth, compute `thresholds`, run the ensemble
//! `filter`, and summarize score distributions with `stats`.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 I/O error.

mod commands;
mod manifest;

pub use manifest::{ManifestRecorder, RunManifest, MANIFEST_FILE_NAME};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::annotations::AnnotationError;
use crate::corpus::CorpusError;
use crate::embeddings::EmbeddingError;
use crate::metrics::MetricsError;
use crate::pipeline::PipelineError;
use crate::regressor::RegressorError;
use crate::thresholds::ThresholdError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AnnotationError> for CliError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::Io(inner) => CliError::Io(inner.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(inner) => CliError::Io(inner.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ThresholdError> for CliError {
    fn from(e: ThresholdError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Io(inner) => CliError::Io(inner.to_string()),
            EmbeddingError::InvalidUri { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<RegressorError> for CliError {
    fn from(e: RegressorError) -> Self {
        match e {
            RegressorError::Io(inner) => CliError::Io(inner.to_string()),
            RegressorError::Embedding(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(inner) => CliError::Io(inner.to_string()),
            PipelineError::Embedding(inner) => inner.into(),
            PipelineError::Regressor(inner) => inner.into(),
            PipelineError::Corpus(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "curator",
    version,
    about = "Distill teacher quality scores into lightweight annotators and filter corpora with percentile-threshold ensembles"
)]
pub struct Cli {
    /// Append the run manifest to this file instead of
    /// run_manifests.jsonl beside the first output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Consolidate raw votes into aggregated labels and report agreement.
    Aggregate(AggregateArgs),
    /// Materialize document embeddings into a binary vector store.
    Embed(EmbedArgs),
    /// Train a scoring head on cached embeddings and aggregated labels.
    Train(TrainArgs),
    /// Evaluate heads against ground-truth labels.
    Eval(EvalArgs),
    /// Compute per-head percentile thresholds from reference scores.
    Thresholds(ThresholdsArgs),
    /// Filter corpus shards with an ensemble of heads.
    Filter(FilterArgs),
    /// Summarize score distributions from annotated output files.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Votes JSONL: {"doc_id": ..., "votes": [...]} per line.
    #[arg(long)]
    pub votes: PathBuf,
    /// Aggregated labels output (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the agreement report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Corpus shards (files or directories of .jsonl).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Embedding provider URI (mock:, store:, http(s)://).
    #[arg(long)]
    pub provider: String,
    /// Output store path.
    #[arg(long)]
    pub out: PathBuf,
    /// Documents per provider request.
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    /// Backbone id recorded in the store (defaults to the provider's).
    #[arg(long)]
    pub backbone_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Embedding store with vectors for every labeled document.
    #[arg(long)]
    pub store: PathBuf,
    /// Aggregated labels JSONL.
    #[arg(long)]
    pub labels: PathBuf,
    /// Head file output.
    #[arg(long)]
    pub out: PathBuf,
    /// Training history output (default: <out>.history.json).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// JSON file with TrainConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Teacher name recorded as the head id (default: labels file stem).
    #[arg(long)]
    pub label_source: Option<String>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub lr_peak: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<u32>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub early_stop_delta: Option<f64>,
    #[arg(long)]
    pub early_stop_patience: Option<u32>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Head file(s) to evaluate.
    #[arg(long = "head", required = true, num_args = 1..)]
    pub heads: Vec<PathBuf>,
    /// Embedding store covering the ground-truth documents.
    #[arg(long)]
    pub store: PathBuf,
    /// Ground-truth aggregated labels JSONL.
    #[arg(long)]
    pub gt: PathBuf,
    /// Metrics report output (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ThresholdsArgs {
    /// Head file(s); scores come from running them over --store.
    #[arg(long = "head", num_args = 1..)]
    pub heads: Vec<PathBuf>,
    /// Embedding store serving as the reference sample.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Alternatively: annotated JSONL file(s) with per-head scores.
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Percentile in [0, 1].
    #[arg(long)]
    pub percentile: f64,
    /// Thresholds output (JSON array).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Corpus shards (files or directories of .jsonl).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Head file(s) forming the ensemble.
    #[arg(long = "head", required = true, num_args = 1..)]
    pub heads: Vec<PathBuf>,
    /// Thresholds JSON produced by the thresholds command.
    #[arg(long)]
    pub thresholds: PathBuf,
    /// Embedding provider URI (mock:, store:, http(s)://).
    #[arg(long)]
    pub provider: String,
    /// Output directory for kept/reject shards, markers and stats.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write rejected documents (with scores) beside the kept ones.
    #[arg(long)]
    pub keep_rejects: bool,
    /// Concurrent shard workers.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Documents per embedding request.
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    /// Stats JSON output (default: <out-dir>/stats.json).
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Annotated JSONL file(s), e.g. filter outputs.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Report output (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses and executes; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    let name = match &cli.command {
        Command::Aggregate(_) => "aggregate",
        Command::Embed(_) => "embed",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Thresholds(_) => "thresholds",
        Command::Filter(_) => "filter",
        Command::Stats(_) => "stats",
    };
    let mut recorder = ManifestRecorder::new(name, cli.manifest.clone());
    let result = match &cli.command {
        Command::Aggregate(args) => commands::aggregate(args, &mut recorder),
        Command::Embed(args) => commands::embed(args, &mut recorder),
        Command::Train(args) => commands::train(args, &mut recorder),
        Command::Eval(args) => commands::eval(args, &mut recorder),
        Command::Thresholds(args) => commands::thresholds(args, &mut recorder),
        Command::Filter(args) => commands::filter(args, &mut recorder),
        Command::Stats(args) => commands::stats(args, &mut recorder),
    };
    match result {
        Ok(()) => {
            recorder.finish(Ok(()));
            EXIT_OK
        }
        Err(e) => {
            recorder.finish(Err(&e.to_string()));
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
