//! Consolidating multi-vote quality scores into labels.
//!
//! Raw votes arrive as triplets (or more) of 0-5 ratings per document.
//! Validation keeps only parseable in-range integers; a record whose votes
//! all fail validation is invalid as a whole. Aggregation takes the unique
//! modal vote when one exists and falls back to the arithmetic mean
//! otherwise. Agreement statistics and balanced training-sample selection
//! operate on the validated collections.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

/// Highest valid vote on the 0-5 scale.
pub const MAX_VOTE: u8 = 5;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("votes list is empty")]
    EmptyVotes,
    #[error("vote {0} outside the 0-5 range")]
    VoteOutOfRange(u8),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("target_total must be >= 1")]
    InvalidTarget,
    #[error("line {line}: {reason}")]
    InvalidRecord { line: u64, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// A document's validated votes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreVotes {
    pub doc_id: String,
    pub votes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMethod {
    Majority,
    Mean,
}

/// A document's consolidated quality score with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub doc_id: String,
    pub score: f64,
    pub method: AggregationMethod,
    pub votes: Vec<u8>,
}

/// Keeps exactly the raw values that parse as integers in [0, 5], in order.
/// An empty result marks the whole record invalid.
pub fn validate_votes<S: AsRef<str>>(raw: &[S]) -> Vec<u8> {
    raw.iter()
        .filter_map(|s| {
            s.as_ref()
                .trim()
                .parse::<i64>()
                .ok()
                .filter(|v| (0..=MAX_VOTE as i64).contains(v))
                .map(|v| v as u8)
        })
        .collect()
}

/// Unique modal vote if one exists, None on a tie (or no repeats).
fn unique_mode(votes: &[u8]) -> Option<u8> {
    let mut counts = [0usize; MAX_VOTE as usize + 1];
    for &v in votes {
        counts[v as usize] += 1;
    }
    let best = *counts.iter().max().unwrap();
    let mut modes = counts.iter().enumerate().filter(|(_, &c)| c == best);
    let mode = modes.next().map(|(v, _)| v as u8);
    if modes.next().is_none() {
        mode
    } else {
        None
    }
}

/// Majority vote with mean fallback: the unique mode when one exists,
/// otherwise the arithmetic mean of all votes. Permutation-invariant.
pub fn aggregate(doc_id: impl Into<String>, votes: &[u8]) -> Result<AggregatedLabel, AnnotationError> {
    if votes.is_empty() {
        return Err(AnnotationError::EmptyVotes);
    }
    if let Some(&v) = votes.iter().find(|&&v| v > MAX_VOTE) {
        return Err(AnnotationError::VoteOutOfRange(v));
    }
    let (score, method) = match unique_mode(votes) {
        Some(mode) => (mode as f64, AggregationMethod::Majority),
        None => (
            votes.iter().map(|&v| v as f64).sum::<f64>() / votes.len() as f64,
            AggregationMethod::Mean,
        ),
    };
    Ok(AggregatedLabel {
        doc_id: doc_id.into(),
        score,
        method,
        votes: votes.to_vec(),
    })
}

/// Inter-annotator agreement summary.
///
/// `spread_cdf[s]` is the fraction of documents whose vote spread
/// (max - min) is <= s; it is nondecreasing and reaches 1 at s = 5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub majority_share: f64,
    pub label_std: f64,
    pub spread_cdf: [f64; MAX_VOTE as usize + 1],
}

/// Agreement statistics over validated, non-invalid records.
/// `label_std` is the mean per-document population standard deviation.
pub fn agreement_report(records: &[ScoreVotes]) -> Result<AgreementReport, AnnotationError> {
    if records.is_empty() {
        return Err(AnnotationError::EmptyDataset);
    }
    let n = records.len() as f64;
    let mut with_mode = 0usize;
    let mut stds = Vec::with_capacity(records.len());
    let mut spread_counts = [0u64; MAX_VOTE as usize + 1];
    for rec in records {
        if rec.votes.is_empty() {
            return Err(AnnotationError::EmptyVotes);
        }
        if let Some(&v) = rec.votes.iter().find(|&&v| v > MAX_VOTE) {
            return Err(AnnotationError::VoteOutOfRange(v));
        }
        if unique_mode(&rec.votes).is_some() {
            with_mode += 1;
        }
        let k = rec.votes.len() as f64;
        let mean = rec.votes.iter().map(|&v| v as f64).sum::<f64>() / k;
        let var = rec
            .votes
            .iter()
            .map(|&v| (v as f64 - mean) * (v as f64 - mean))
            .sum::<f64>()
            / k;
        stds.push(var.sqrt());
        let spread = rec.votes.iter().max().unwrap() - rec.votes.iter().min().unwrap();
        spread_counts[spread as usize] += 1;
    }
    // summing in sorted order makes the report exactly permutation-invariant
    stds.sort_unstable_by(f64::total_cmp);
    let std_sum: f64 = stds.iter().sum();
    let mut spread_cdf = [0.0; MAX_VOTE as usize + 1];
    let mut acc = 0u64;
    for (s, &c) in spread_counts.iter().enumerate() {
        acc += c;
        spread_cdf[s] = acc as f64 / n;
    }
    Ok(AgreementReport {
        majority_share: with_mode as f64 / n,
        label_std: std_sum / n,
        spread_cdf,
    })
}

/// Result of [`balanced_sample`]. `exhausted` flags that the request
/// exceeded the available supply and every id was returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancedSample {
    pub doc_ids: Vec<String>,
    pub exhausted: bool,
}

/// Draws up to `target_total` doc ids with the most uniform possible
/// distribution over the six rounded-score bins.
///
/// Labels are binned by `round(score)` (half away from zero). Bins are
/// drained one id at a time in round-robin order, so each bin is filled
/// toward target_total/6 and the shortfall of an exhausted bin spreads
/// evenly over the remaining ones. Within a bin the order is a seeded
/// shuffle of the ids sorted lexicographically, making the draw
/// deterministic for a given seed regardless of input order.
pub fn balanced_sample(
    labels: &[AggregatedLabel],
    target_total: usize,
    rng_seed: u64,
) -> Result<BalancedSample, AnnotationError> {
    if target_total == 0 {
        return Err(AnnotationError::InvalidTarget);
    }
    let mut bins: [Vec<&str>; MAX_VOTE as usize + 1] = Default::default();
    for label in labels {
        let bin = label.score.round().clamp(0.0, MAX_VOTE as f64) as usize;
        bins[bin].push(&label.doc_id);
    }
    for (i, bin) in bins.iter_mut().enumerate() {
        bin.sort_unstable();
        let mut rng = SeededRng::substream(rng_seed, i as u64);
        rng.shuffle(bin);
    }
    let available: usize = bins.iter().map(Vec::len).sum();
    let take = target_total.min(available);
    let mut cursors = [0usize; MAX_VOTE as usize + 1];
    let mut doc_ids = Vec::with_capacity(take);
    while doc_ids.len() < take {
        for (bin, cursor) in bins.iter().zip(cursors.iter_mut()) {
            if doc_ids.len() == take {
                break;
            }
            if *cursor < bin.len() {
                doc_ids.push(bin[*cursor].to_owned());
                *cursor += 1;
            }
        }
    }
    Ok(BalancedSample {
        doc_ids,
        exhausted: target_total > available,
    })
}

/// One line of the votes input file: doc_id plus raw votes that may be
/// JSON strings or integers.
#[derive(Debug, Deserialize)]
pub struct VoteRecord {
    pub doc_id: String,
    pub votes: Vec<serde_json::Value>,
}

impl VoteRecord {
    /// Raw vote values as strings, ready for [`validate_votes`].
    pub fn raw_votes(&self) -> Vec<String> {
        self.votes
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect()
    }
}

/// Reads a votes JSONL stream. Malformed lines error; records whose votes
/// all fail validation are returned with empty `votes` (invalid records).
pub fn read_vote_records(reader: impl BufRead) -> Result<Vec<ScoreVotes>, AnnotationError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VoteRecord =
            serde_json::from_str(&line).map_err(|e| AnnotationError::InvalidRecord {
                line: idx as u64 + 1,
                reason: e.to_string(),
            })?;
        let votes = validate_votes(&record.raw_votes());
        out.push(ScoreVotes {
            doc_id: record.doc_id,
            votes,
        });
    }
    Ok(out)
}

/// Reads aggregated labels from JSONL.
pub fn read_aggregated_labels(
    reader: impl BufRead,
) -> Result<Vec<AggregatedLabel>, AnnotationError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let label: AggregatedLabel =
            serde_json::from_str(&line).map_err(|e| AnnotationError::InvalidRecord {
                line: idx as u64 + 1,
                reason: e.to_string(),
            })?;
        out.push(label);
    }
    Ok(out)
}
