//! Streaming curation pipeline: embed, score with N heads, apply the
//! ensemble threshold rule, write kept documents with their scores, and
//! account for retention.
//!
//! A document is kept only when every head rates it strictly above its own
//! threshold. Shards are processed independently (optionally in parallel);
//! a completed shard leaves a zero-byte `<shard>.done` marker plus a stats
//! sidecar, so interrupted runs resume without reprocessing and reproduce
//! identical totals. Stats merging is associative and commutative, which
//! makes the final numbers independent of worker count and completion
//! order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{estimate_tokens, CorpusError, Document, ShardReader};
use crate::embeddings::{EmbeddingError, EmbeddingProvider};
use crate::metrics::{self, MetricsError};
use crate::regressor::{RegressionHead, RegressorError};
use crate::thresholds::ThresholdSpec;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ensemble config: {0}")]
    Config(String),
    #[error("missing score for head '{0}'")]
    MissingScore(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("shard '{shard}' has a completion marker but its stats sidecar is unreadable: {reason}")]
    CorruptCheckpoint { shard: String, reason: String },
    #[error("duplicate shard file name '{0}'")]
    DuplicateShardName(String),
    #[error("empty scores for head '{0}'")]
    EmptyScores(String),
}

/// One head paired with its threshold spec.
#[derive(Debug, Clone)]
pub struct EnsembleHead {
    pub head: RegressionHead,
    pub spec: ThresholdSpec,
}

/// The filtering ensemble; the decision rule is fixed to all-above.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    heads: Vec<EnsembleHead>,
}

impl EnsembleConfig {
    pub fn new(pairs: Vec<(RegressionHead, ThresholdSpec)>) -> Result<Self, PipelineError> {
        if pairs.is_empty() {
            return Err(PipelineError::Config("ensemble needs at least one head".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (head, spec) in &pairs {
            if head.head_id() != spec.head_id {
                return Err(PipelineError::Config(format!(
                    "head '{}' paired with spec for '{}'",
                    head.head_id(),
                    spec.head_id
                )));
            }
            if !seen.insert(spec.head_id.clone()) {
                return Err(PipelineError::Config(format!(
                    "duplicate head id '{}'",
                    spec.head_id
                )));
            }
        }
        Ok(Self {
            heads: pairs
                .into_iter()
                .map(|(head, spec)| EnsembleHead { head, spec })
                .collect(),
        })
    }

    pub fn heads(&self) -> &[EnsembleHead] {
        &self.heads
    }

    /// Scores one embedding with every head.
    pub fn score(&self, values: &[f32]) -> Result<BTreeMap<String, f64>, PipelineError> {
        let mut scores = BTreeMap::new();
        for member in &self.heads {
            scores.insert(member.spec.head_id.clone(), member.head.forward(values)?);
        }
        Ok(scores)
    }
}

/// Per-head verdicts plus the ensemble decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub keep: bool,
    pub verdicts: BTreeMap<String, bool>,
}

/// Keep iff the score is strictly above the threshold for every head.
pub fn decide(
    scores: &BTreeMap<String, f64>,
    ensemble: &EnsembleConfig,
) -> Result<Decision, PipelineError> {
    let mut verdicts = BTreeMap::new();
    let mut keep = true;
    for member in &ensemble.heads {
        let id = &member.spec.head_id;
        let score = scores
            .get(id)
            .ok_or_else(|| PipelineError::MissingScore(id.clone()))?;
        let above = *score > member.spec.threshold_value;
        keep &= above;
        verdicts.insert(id.clone(), above);
    }
    Ok(Decision { keep, verdicts })
}

/// Exact filtering statistics; counts are additive, retention fractions are
/// recomputed after merges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub docs_in: u64,
    pub docs_kept: u64,
    pub docs_dropped: u64,
    pub docs_errored: u64,
    /// Malformed input lines that never became documents.
    pub docs_invalid: u64,
    pub tokens_in: u64,
    pub tokens_kept: u64,
    pub tokens_dropped: u64,
    pub tokens_errored: u64,
    pub per_head_pass_counts: BTreeMap<String, u64>,
    pub retention_docs: f64,
    pub retention_tokens: f64,
    pub shards_completed: u64,
    pub shards_failed: Vec<String>,
}

impl FilterStats {
    pub fn merge(&mut self, other: &FilterStats) {
        self.docs_in += other.docs_in;
        self.docs_kept += other.docs_kept;
        self.docs_dropped += other.docs_dropped;
        self.docs_errored += other.docs_errored;
        self.docs_invalid += other.docs_invalid;
        self.tokens_in += other.tokens_in;
        self.tokens_kept += other.tokens_kept;
        self.tokens_dropped += other.tokens_dropped;
        self.tokens_errored += other.tokens_errored;
        for (head, count) in &other.per_head_pass_counts {
            *self.per_head_pass_counts.entry(head.clone()).or_insert(0) += count;
        }
        self.shards_completed += other.shards_completed;
        self.shards_failed.extend(other.shards_failed.iter().cloned());
        self.recompute_retention();
    }

    pub fn recompute_retention(&mut self) {
        self.retention_docs = ratio(self.docs_kept, self.docs_in);
        self.retention_tokens = ratio(self.tokens_kept, self.tokens_in);
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub out_dir: PathBuf,
    pub keep_rejects: bool,
    pub workers: usize,
    /// Documents per provider call.
    pub embed_batch: usize,
}

impl PipelineOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            keep_rejects: false,
            workers: 1,
            embed_batch: 1000,
        }
    }
}

fn shard_file_name(shard: &Path) -> String {
    shard
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| shard.to_string_lossy().into_owned())
}

fn shard_stem(shard: &Path) -> String {
    shard
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| shard_file_name(shard))
}

/// Runs the filter over the shards. Failed shards are recorded in the
/// returned stats and do not affect the others; shards with an existing
/// completion marker are never reprocessed (their sidecar stats are merged
/// instead).
pub fn run_pipeline(
    shards: &[PathBuf],
    provider: &dyn EmbeddingProvider,
    ensemble: &EnsembleConfig,
    options: &PipelineOptions,
) -> Result<FilterStats, PipelineError> {
    let mut names = std::collections::HashSet::new();
    for shard in shards {
        if !names.insert(shard_file_name(shard)) {
            return Err(PipelineError::DuplicateShardName(shard_file_name(shard)));
        }
    }
    if let Some(dim) = provider.dim() {
        for member in ensemble.heads() {
            if member.head.input_dim != dim {
                return Err(PipelineError::Config(format!(
                    "head '{}' expects dim {}, provider produces {}",
                    member.spec.head_id, member.head.input_dim, dim
                )));
            }
        }
    }
    std::fs::create_dir_all(&options.out_dir)?;
    let started = std::time::Instant::now();

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, FilterStats)>> = Mutex::new(Vec::new());
    let workers = options.workers.clamp(1, shards.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= shards.len() {
                    break;
                }
                let shard = &shards[i];
                let outcome = process_or_resume(shard, provider, ensemble, options);
                let stats = match outcome {
                    Ok(stats) => stats,
                    Err(e) => {
                        log::error!("shard {} failed: {e}", shard.display());
                        let mut stats = FilterStats::default();
                        stats.shards_failed.push(shard_file_name(shard));
                        stats
                    }
                };
                results.lock().unwrap().push((i, stats));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);
    let mut total = FilterStats::default();
    for (_, stats) in &results {
        total.merge(stats);
    }
    total.recompute_retention();

    // throughput is logged, never written into the stats (identical runs
    // must produce identical stats regardless of wall clock)
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    if minutes > 0.0 && total.docs_in > 0 {
        log::info!(
            "processed {} docs ({} tokens) in {:.2}s: {:.0} docs/min, {:.0} tokens/min",
            total.docs_in,
            total.tokens_in,
            minutes * 60.0,
            total.docs_in as f64 / minutes,
            total.tokens_in as f64 / minutes,
        );
    }
    Ok(total)
}

fn process_or_resume(
    shard: &Path,
    provider: &dyn EmbeddingProvider,
    ensemble: &EnsembleConfig,
    options: &PipelineOptions,
) -> Result<FilterStats, PipelineError> {
    let name = shard_file_name(shard);
    let done_marker = options.out_dir.join(format!("{name}.done"));
    if done_marker.exists() {
        let sidecar = options
            .out_dir
            .join(format!("{}.stats.json", shard_stem(shard)));
        let stats = std::fs::read(&sidecar)
            .map_err(|e| PipelineError::CorruptCheckpoint {
                shard: name.clone(),
                reason: e.to_string(),
            })
            .and_then(|bytes| {
                serde_json::from_slice(&bytes).map_err(|e| PipelineError::CorruptCheckpoint {
                    shard: name.clone(),
                    reason: e.to_string(),
                })
            })?;
        log::info!("shard {name} already complete, merging sidecar stats");
        return Ok(stats);
    }
    let failed_marker = options.out_dir.join(format!("{name}.failed"));
    let _ = std::fs::remove_file(&failed_marker);
    match process_shard(shard, provider, ensemble, options) {
        Ok(stats) => Ok(stats),
        Err(e) => {
            let _ = std::fs::write(&failed_marker, e.to_string());
            Err(e)
        }
    }
}

struct TmpFile {
    tmp: PathBuf,
    target: PathBuf,
    writer: BufWriter<File>,
}

impl TmpFile {
    fn create(target: PathBuf) -> Result<Self, std::io::Error> {
        let tmp = target.with_extension("tmp");
        Ok(Self {
            writer: BufWriter::new(File::create(&tmp)?),
            tmp,
            target,
        })
    }

    fn commit(mut self) -> Result<(), std::io::Error> {
        self.writer.flush()?;
        std::fs::rename(&self.tmp, &self.target)
    }

    fn discard(self) {
        drop(self.writer);
        let _ = std::fs::remove_file(&self.tmp);
    }
}

fn process_shard(
    shard: &Path,
    provider: &dyn EmbeddingProvider,
    ensemble: &EnsembleConfig,
    options: &PipelineOptions,
) -> Result<FilterStats, PipelineError> {
    let stem = shard_stem(shard);
    let name = shard_file_name(shard);
    let mut kept_out = TmpFile::create(options.out_dir.join(format!("{stem}.kept.jsonl")))?;
    let mut rejects_out = if options.keep_rejects {
        Some(TmpFile::create(
            options.out_dir.join(format!("{stem}.rejects.jsonl")),
        )?)
    } else {
        None
    };

    let result = (|| -> Result<FilterStats, PipelineError> {
        let mut stats = FilterStats::default();
        for member in ensemble.heads() {
            stats
                .per_head_pass_counts
                .insert(member.spec.head_id.clone(), 0);
        }
        let mut reader = ShardReader::new(BufReader::new(File::open(shard)?));
        let mut batch: Vec<Document> = Vec::with_capacity(options.embed_batch);
        loop {
            batch.clear();
            let mut exhausted = true;
            for item in &mut reader {
                match item {
                    Ok(doc) => {
                        batch.push(doc);
                        if batch.len() == options.embed_batch {
                            exhausted = false;
                            break;
                        }
                    }
                    Err(e) if e.is_fatal() => return Err(e.into()),
                    Err(e) => log::debug!("{}: skipping record: {e}", shard.display()),
                }
            }
            if !batch.is_empty() {
                let vectors = provider.embed_batch(&batch)?;
                for (doc, values) in batch.iter().zip(&vectors) {
                    let scores = ensemble.score(values)?;
                    let decision = decide(&scores, ensemble)?;
                    let tokens = estimate_tokens(doc);
                    stats.docs_in += 1;
                    stats.tokens_in += tokens;
                    for (head, &above) in &decision.verdicts {
                        if above {
                            *stats.per_head_pass_counts.get_mut(head).expect("preset") += 1;
                        }
                    }
                    if decision.keep {
                        stats.docs_kept += 1;
                        stats.tokens_kept += tokens;
                        write_annotated(&mut kept_out.writer, doc, &scores, true)?;
                    } else {
                        stats.docs_dropped += 1;
                        stats.tokens_dropped += tokens;
                        if let Some(out) = rejects_out.as_mut() {
                            write_annotated(&mut out.writer, doc, &scores, false)?;
                        }
                    }
                }
            }
            if exhausted {
                break;
            }
        }
        stats.docs_invalid = reader.stats().documents_invalid;
        stats.shards_completed = 1;
        stats.recompute_retention();
        Ok(stats)
    })();

    match result {
        Ok(stats) => {
            kept_out.commit()?;
            if let Some(out) = rejects_out {
                out.commit()?;
            }
            let sidecar = options.out_dir.join(format!("{stem}.stats.json"));
            std::fs::write(&sidecar, serde_json::to_vec(&stats)?)?;
            File::create(options.out_dir.join(format!("{name}.done")))?;
            Ok(stats)
        }
        Err(e) => {
            kept_out.discard();
            if let Some(out) = rejects_out {
                out.discard();
            }
            Err(e)
        }
    }
}

/// Corpus line plus the per-head scores and the decision.
fn write_annotated(
    writer: &mut impl Write,
    doc: &Document,
    scores: &BTreeMap<String, f64>,
    keep: bool,
) -> Result<(), PipelineError> {
    let mut value = serde_json::to_value(doc)?;
    let object = value.as_object_mut().expect("document serializes to an object");
    object.insert("scores".into(), serde_json::to_value(scores)?);
    object.insert(
        "decision".into(),
        serde_json::Value::String(if keep { "keep" } else { "drop" }.into()),
    );
    serde_json::to_writer(&mut *writer, &value)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Per-head score lists keyed by head id.
pub type ScoresByHead = BTreeMap<String, Vec<f64>>;

/// A filter-output line reduced to what reports need.
#[derive(Debug, Deserialize)]
pub struct AnnotatedLine {
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub decision: Option<String>,
}

/// Reads annotated (filter-output) JSONL back into per-head score lists and
/// an optional kept/removed partition.
pub fn read_annotated_scores(
    reader: impl BufRead,
) -> Result<(ScoresByHead, Vec<bool>), PipelineError> {
    let mut per_head: ScoresByHead = BTreeMap::new();
    let mut partition = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AnnotatedLine = serde_json::from_str(&line)?;
        for (head, value) in parsed.scores {
            per_head.entry(head).or_default().push(value);
        }
        partition.push(parsed.decision.as_deref() == Some("keep"));
    }
    Ok((per_head, partition))
}

pub const DIST_BIN_COUNT: usize = 61;
const DIST_RANGE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadDistribution {
    pub count: u64,
    pub mean: f64,
    /// 61 equal bins spanning [0, 6).
    pub bins: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    /// Per-partition means when a kept/removed partition was supplied.
    pub kept_mean: Option<f64>,
    pub removed_mean: Option<f64>,
    /// All scores identical; rank statistics are undefined.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistributionReport {
    pub per_head: BTreeMap<String, HeadDistribution>,
    /// Keyed "headA::headB"; None when either side is degenerate.
    pub pairwise_spearman: BTreeMap<String, Option<f64>>,
}

/// Per-head histograms and summary statistics; with a partition, adds
/// per-partition means and the pairwise Spearman between heads.
pub fn score_distribution_report(
    scores_per_head: &ScoresByHead,
    partition: Option<&[bool]>,
) -> Result<ScoreDistributionReport, PipelineError> {
    let mut per_head = BTreeMap::new();
    for (head, scores) in scores_per_head {
        if scores.is_empty() {
            return Err(PipelineError::EmptyScores(head.clone()));
        }
        let mut bins = vec![0u64; DIST_BIN_COUNT];
        let mut underflow = 0;
        let mut overflow = 0;
        for &s in scores {
            if s < 0.0 {
                underflow += 1;
            } else if s >= DIST_RANGE {
                overflow += 1;
            } else {
                bins[(s / DIST_RANGE * DIST_BIN_COUNT as f64) as usize] += 1;
            }
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let (kept_mean, removed_mean) = match partition {
            Some(kept) if kept.len() == scores.len() => {
                let mean_of = |flag: bool| {
                    let selected: Vec<f64> = scores
                        .iter()
                        .zip(kept)
                        .filter(|(_, &k)| k == flag)
                        .map(|(s, _)| *s)
                        .collect();
                    if selected.is_empty() {
                        None
                    } else {
                        Some(selected.iter().sum::<f64>() / selected.len() as f64)
                    }
                };
                (mean_of(true), mean_of(false))
            }
            _ => (None, None),
        };
        let degenerate = scores.iter().all(|&s| s == scores[0]);
        per_head.insert(
            head.clone(),
            HeadDistribution {
                count: scores.len() as u64,
                mean,
                bins,
                underflow,
                overflow,
                kept_mean,
                removed_mean,
                degenerate,
            },
        );
    }

    let mut pairwise_spearman = BTreeMap::new();
    if partition.is_some() {
        let heads: Vec<&String> = scores_per_head.keys().collect();
        for (i, a) in heads.iter().enumerate() {
            for b in &heads[i + 1..] {
                let (sa, sb) = (&scores_per_head[*a], &scores_per_head[*b]);
                let rho = if sa.len() == sb.len() {
                    metrics::spearman(sa, sb).ok()
                } else {
                    None
                };
                pairwise_spearman.insert(format!("{a}::{b}"), rho);
            }
        }
    }
    Ok(ScoreDistributionReport {
        per_head,
        pairwise_spearman,
    })
}
