//! The lightweight annotator: a two-layer scoring MLP over embeddings.
//!
//! `score = W2 * relu(W1 * x + b1) + b2`. The head is tiny next to the
//! frozen backbone producing `x`, so many heads can share one embedding
//! stream. Weights are 32-bit at rest and in the in-memory head; training
//! (see [`train`]) accumulates in 64-bit and quantizes once at the end.
//! Scores are not clamped to [0, 5]: downstream thresholds are percentile
//! based, and clamping would create rank-corrupting ties.

mod train;

pub use train::{
    adamw_step, backward, cosine_lr, mse_loss, train as train_head, train_validation_split,
    train_with_metric, AdamState, EarlyStopping, EpochRecord, HeadParams, StopDecision,
    TrainConfig, TrainHistory, ValMetric,
};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::EmbeddingError;

pub const HEAD_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("no embeddings for doc ids: [{}]", .0.join(", "))]
    MissingEmbeddings(Vec<String>),
    #[error("labels are constant; rank correlation is undefined")]
    DegenerateLabels,
    #[error("need at least {needed} labeled documents, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no epoch produced a usable validation metric")]
    NoUsableValidationMetric,
    #[error("head file version {found} unsupported (expected {HEAD_FILE_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("corrupt head file: {0}")]
    Corrupt(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// How a head was trained; stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: u32,
    /// Best validation Spearman under the early-stopping bookkeeping; the
    /// restored weights are the ones that achieved it.
    pub best_val_spearman: f64,
    /// Name of the teacher/label set the head distills. Doubles as the
    /// head's identity when matched against threshold specs.
    pub label_source: String,
}

/// Weights and metadata of one scoring head.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionHead {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// hidden_dim x input_dim, row-major.
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    /// 1 x hidden_dim.
    pub w2: Vec<f32>,
    pub b2: f32,
    pub backbone_id: String,
    pub meta: TrainingMeta,
}

impl RegressionHead {
    /// Identity used to pair the head with its threshold spec.
    pub fn head_id(&self) -> &str {
        &self.meta.label_source
    }

    pub fn parameter_count(&self) -> usize {
        self.input_dim * self.hidden_dim + self.hidden_dim + self.hidden_dim + 1
    }

    /// Scalar score for one embedding; 64-bit accumulation over the 32-bit
    /// weights, pure and deterministic.
    pub fn forward(&self, x: &[f32]) -> Result<f64, RegressorError> {
        if x.len() != self.input_dim {
            return Err(RegressorError::DimMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let mut score = self.b2 as f64;
        for (j, row) in self.w1.chunks_exact(self.input_dim).enumerate() {
            let pre = self.b1[j] as f64 + dot_f32(row, x);
            if pre > 0.0 {
                score += self.w2[j] as f64 * pre;
            }
        }
        Ok(score)
    }

    /// Elementwise forward over a batch; order-preserving.
    pub fn predict_batch<V: AsRef<[f32]>>(&self, vectors: &[V]) -> Result<Vec<f64>, RegressorError> {
        vectors.iter().map(|v| self.forward(v.as_ref())).collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), RegressorError> {
        let file = HeadFile {
            format_version: HEAD_FILE_VERSION,
            backbone_id: self.backbone_id.clone(),
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            training_meta: self.meta.clone(),
            w1: encode_f32(&self.w1),
            b1: encode_f32(&self.b1),
            w2: encode_f32(&self.w2),
            b2: encode_f32(&[self.b2]),
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| RegressorError::Corrupt(format!("serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, RegressorError> {
        let bytes = std::fs::read(path)?;
        let file: HeadFile = serde_json::from_slice(&bytes)
            .map_err(|e| RegressorError::Corrupt(e.to_string()))?;
        if file.format_version != HEAD_FILE_VERSION {
            return Err(RegressorError::VersionMismatch {
                found: file.format_version,
            });
        }
        let w1 = decode_f32(&file.w1, file.hidden_dim * file.input_dim, "w1")?;
        let b1 = decode_f32(&file.b1, file.hidden_dim, "b1")?;
        let w2 = decode_f32(&file.w2, file.hidden_dim, "w2")?;
        let b2 = decode_f32(&file.b2, 1, "b2")?[0];
        Ok(Self {
            input_dim: file.input_dim,
            hidden_dim: file.hidden_dim,
            w1,
            b1,
            w2,
            b2,
            backbone_id: file.backbone_id,
            meta: file.training_meta,
        })
    }
}

/// On-disk JSON envelope; weight arrays are base64 of IEEE-754 binary32
/// little-endian bytes, in the order w1 (row-major), b1, w2, b2.
#[derive(Serialize, Deserialize)]
struct HeadFile {
    format_version: u32,
    backbone_id: String,
    input_dim: usize,
    hidden_dim: usize,
    training_meta: TrainingMeta,
    w1: String,
    b1: String,
    w2: String,
    b2: String,
}

fn encode_f32(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_f32(encoded: &str, expected_len: usize, field: &str) -> Result<Vec<f32>, RegressorError> {
    let bytes = BASE64
        .decode(encoded)
        .map_err(|e| RegressorError::Corrupt(format!("{field}: {e}")))?;
    if bytes.len() != expected_len * 4 {
        return Err(RegressorError::Corrupt(format!(
            "{field}: expected {} bytes, got {}",
            expected_len * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Four-accumulator dot product of a 32-bit row with a 32-bit input,
/// accumulated in 64-bit. The summation order is fixed.
#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        acc[0] += ca[0] as f64 * cb[0] as f64;
        acc[1] += ca[1] as f64 * cb[1] as f64;
        acc[2] += ca[2] as f64 * cb[2] as f64;
        acc[3] += ca[3] as f64 * cb[3] as f64;
    }
    let mut rest = 0.0;
    for (x, y) in a
        .chunks_exact(4)
        .remainder()
        .iter()
        .zip(b.chunks_exact(4).remainder())
    {
        rest += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + rest
}
