//! Percentile thresholds over reference score samples.
//!
//! Because annotators score on shifted scales, absolute cutoffs do not
//! transfer between heads; a quantile of each head's own score
//! distribution does. Quantiles interpolate linearly between order
//! statistics, making thresholds continuous in p and equivariant under
//! positive affine rescaling of the scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ThresholdError {
    #[error("cannot take a quantile of an empty sample")]
    EmptySample,
    #[error("scores must be finite")]
    NonFinite,
    #[error("percentile {0} outside [0, 1]")]
    PercentileOutOfRange(f64),
}

/// A head's percentile cutoff realized on a reference sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub head_id: String,
    pub percentile: f64,
    pub threshold_value: f64,
    pub reference_sample_size: usize,
    pub computed_at: String,
}

/// Linear interpolation between order statistics: with sorted v and
/// h = (n-1)p, returns v[floor(h)] + frac(h) * (v[floor(h)+1] - v[floor(h)]).
pub fn quantile(values: &[f64], p: f64) -> Result<f64, ThresholdError> {
    if values.is_empty() {
        return Err(ThresholdError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ThresholdError::NonFinite);
    }
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(ThresholdError::PercentileOutOfRange(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        Ok(sorted[lo])
    } else {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    }
}

// SOURCE_DATE_EPOCH (unix seconds) pins the timestamp for byte-reproducible
// threshold files.
fn spec_timestamp() -> String {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339()
}

/// One ThresholdSpec per head at a shared percentile.
pub fn compute_thresholds(
    scores_per_head: &BTreeMap<String, Vec<f64>>,
    p: f64,
) -> Result<Vec<ThresholdSpec>, ThresholdError> {
    let computed_at = spec_timestamp();
    scores_per_head
        .iter()
        .map(|(head_id, scores)| {
            Ok(ThresholdSpec {
                head_id: head_id.clone(),
                percentile: p,
                threshold_value: quantile(scores, p)?,
                reference_sample_size: scores.len(),
                computed_at: computed_at.clone(),
            })
        })
        .collect()
}
