//! Document embeddings behind a uniform provider boundary.
//!
//! The scoring heads only ever see vectors; where those vectors come from
//! is a provider concern. Three providers are built in and selected by URI
//! scheme:
//!
//! * `mock:` — deterministic keyed-hash embeddings for tests and smoke runs
//!   (`mock:?dim=256&seed=0`).
//! * `store:<path>` — a persistent binary store of precomputed vectors
//!   (embeddings are computed once and cached; see [`store`]).
//! * `http(s)://...` — a remote embedding service speaking the JSON batch
//!   protocol (see [`remote`]).

pub mod remote;
pub mod store;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Document;

pub use remote::RemoteEmbedder;
pub use store::EmbeddingStore;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("store format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("duplicate doc id '{0}' in store")]
    DuplicateId(String),
    #[error("non-finite embedding value for doc '{0}'")]
    NonFinite(String),
    #[error("embedding request failed after {attempts} attempts for docs [{}]: {message}", doc_ids.join(", "))]
    RequestFailed {
        attempts: u32,
        doc_ids: Vec<String>,
        message: String,
    },
    #[error("malformed embedding response: {0}")]
    ResponseShape(String),
    #[error("invalid provider uri '{uri}': {reason}")]
    InvalidUri { uri: String, reason: String },
}

/// A document's embedding, tied to the backbone that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub doc_id: String,
    pub backbone_id: String,
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Uniform access to an embedding source. Implementations must be safe to
/// share across shard workers.
pub trait EmbeddingProvider: Send + Sync {
    fn backbone_id(&self) -> &str;

    /// Embedding width, when known before the first batch.
    fn dim(&self) -> Option<usize>;

    /// Embeds a batch; the output order matches the input order.
    fn embed_batch(&self, docs: &[Document]) -> Result<Vec<Vec<f32>>, EmbeddingError>;
}

/// Deterministic test double for a frozen embedding backbone.
///
/// The text is hashed once (keyed by the seed); the digest is then expanded
/// counter-mode into `dim` uniform values in [-1, 1] and L2-normalized.
/// Identical inputs give bitwise-identical vectors.
pub fn mock_embed(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim >= 1, "dim must be >= 1");
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();

    let mut values = Vec::with_capacity(dim);
    let mut counter = 0u64;
    'outer: loop {
        let mut block = Sha256::new();
        block.update(digest);
        block.update(counter.to_le_bytes());
        let bytes = block.finalize();
        for chunk in bytes.chunks_exact(8) {
            let raw = u64::from_le_bytes(chunk.try_into().unwrap());
            values.push((raw as f64 / u64::MAX as f64) * 2.0 - 1.0);
            if values.len() == dim {
                break 'outer;
            }
        }
        counter += 1;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        values[0] = 1.0;
        return values.iter().map(|&v| v as f32).collect();
    }
    values.iter().map(|&v| (v / norm) as f32).collect()
}

pub struct MockProvider {
    dim: usize,
    seed: u64,
    backbone_id: String,
}

impl MockProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            backbone_id: format!("mock:?dim={dim}&seed={seed}"),
        }
    }
}

impl EmbeddingProvider for MockProvider {
    fn backbone_id(&self) -> &str {
        &self.backbone_id
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_batch(&self, docs: &[Document]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        Ok(docs
            .iter()
            .map(|d| mock_embed(&d.text, self.dim, self.seed))
            .collect())
    }
}

/// Store-backed provider: vectors are looked up by doc id, never computed.
pub struct StoreProvider {
    store: EmbeddingStore,
}

impl StoreProvider {
    pub fn new(store: EmbeddingStore) -> Self {
        Self { store }
    }
}

impl EmbeddingProvider for StoreProvider {
    fn backbone_id(&self) -> &str {
        self.store.backbone_id()
    }

    fn dim(&self) -> Option<usize> {
        Some(self.store.dim())
    }

    fn embed_batch(&self, docs: &[Document]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let mut out = Vec::with_capacity(docs.len());
        let mut missing = Vec::new();
        for doc in docs {
            match self.store.get(&doc.id)? {
                Some(values) => out.push(values),
                None => missing.push(doc.id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(EmbeddingError::RequestFailed {
                attempts: 1,
                doc_ids: missing,
                message: "doc ids not present in store".into(),
            });
        }
        Ok(out)
    }
}

/// Default mock dimension when the URI omits it.
pub const DEFAULT_MOCK_DIM: usize = 256;

/// Builds a provider from a URI: `mock:[?dim=D&seed=S]`, `store:<path>`,
/// or an `http(s)://` endpoint.
pub fn provider_from_uri(
    uri: &str,
    remote_options: remote::RemoteOptions,
) -> Result<Box<dyn EmbeddingProvider>, EmbeddingError> {
    if let Some(rest) = uri.strip_prefix("mock:") {
        let mut dim = DEFAULT_MOCK_DIM;
        let mut seed = 0u64;
        let params = rest.strip_prefix('?').unwrap_or(rest);
        for pair in params.split('&').filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(|| EmbeddingError::InvalidUri {
                uri: uri.into(),
                reason: format!("expected key=value, got '{pair}'"),
            })?;
            let parse_err = |e: std::num::ParseIntError| EmbeddingError::InvalidUri {
                uri: uri.into(),
                reason: format!("bad value for '{key}': {e}"),
            };
            match key {
                "dim" => dim = value.parse().map_err(parse_err)?,
                "seed" => seed = value.parse().map_err(parse_err)?,
                other => {
                    return Err(EmbeddingError::InvalidUri {
                        uri: uri.into(),
                        reason: format!("unknown parameter '{other}'"),
                    })
                }
            }
        }
        if dim == 0 {
            return Err(EmbeddingError::InvalidUri {
                uri: uri.into(),
                reason: "dim must be >= 1".into(),
            });
        }
        Ok(Box::new(MockProvider::new(dim, seed)))
    } else if let Some(path) = uri.strip_prefix("store:") {
        let store = EmbeddingStore::open(path)?;
        Ok(Box::new(StoreProvider::new(store)))
    } else if uri.starts_with("http://") || uri.starts_with("https://") {
        Ok(Box::new(RemoteEmbedder::new(uri.to_string(), remote_options)))
    } else {
        Err(EmbeddingError::InvalidUri {
            uri: uri.into(),
            reason: "expected mock:, store:, http:// or https:// scheme".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_is_deterministic() {
        let a = mock_embed("some text", 64, 42);
        let b = mock_embed("some text", 64, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn mock_is_unit_norm() {
        for text in ["", "a", "hello world", "longer text with many words"] {
            let v = mock_embed(text, 97, 7);
            let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm} for {text:?}");
        }
    }

    #[test]
    fn mock_seed_and_text_sensitivity() {
        let a = mock_embed("text", 32, 1);
        let b = mock_embed("text", 32, 2);
        assert_ne!(a, b);
        let c = mock_embed("other", 32, 1);
        assert_ne!(a, c);
        assert_eq!(mock_embed("t", 1, 0).len(), 1);
    }

    #[test]
    fn mock_component_mean_near_zero() {
        // dim * texts >= 1e6 samples; degenerate expansion would show up
        // as a biased component mean
        let dim = 128;
        let texts = 8000;
        let mut sum = 0.0;
        for i in 0..texts {
            let v = mock_embed(&format!("document number {i}"), dim, 11);
            sum += v.iter().map(|&x| x as f64).sum::<f64>();
        }
        let mean = sum / (dim * texts) as f64;
        assert!(mean.abs() < 0.02, "component mean {mean}");
    }

    #[test]
    fn provider_uri_parsing() {
        let p = provider_from_uri("mock:", remote::RemoteOptions::default()).unwrap();
        assert_eq!(p.dim(), Some(DEFAULT_MOCK_DIM));
        let p = provider_from_uri("mock:?dim=32&seed=9", remote::RemoteOptions::default()).unwrap();
        assert_eq!(p.dim(), Some(32));
        assert_eq!(p.backbone_id(), "mock:?dim=32&seed=9");
        assert!(provider_from_uri("mock:?dim=0", remote::RemoteOptions::default()).is_err());
        assert!(provider_from_uri("mock:?bogus=1", remote::RemoteOptions::default()).is_err());
        assert!(provider_from_uri("ftp://x", remote::RemoteOptions::default()).is_err());
        assert!(provider_from_uri("store:/no/such/file", remote::RemoteOptions::default()).is_err());
    }

    #[test]
    fn mock_provider_embeds_documents() {
        let provider = MockProvider::new(16, 3);
        let docs = vec![
            Document::new("a", "first", "en"),
            Document::new("b", "second", "en"),
        ];
        let vectors = provider.embed_batch(&docs).unwrap();
        assert_eq!(vectors.len(), 2);
        assert_eq!(vectors[0], mock_embed("first", 16, 3));
        assert_eq!(vectors[1], mock_embed("second", 16, 3));
    }
}
