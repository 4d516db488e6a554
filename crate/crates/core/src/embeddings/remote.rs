//! HTTP client for a remote embedding service.
//!
//! Protocol: `POST endpoint` with `{"texts": [...]}`, response
//! `{"embeddings": [[...], ...]}`. Requests are issued in batches;
//! transient failures (transport errors, 429 and 5xx statuses) are retried
//! with exponential backoff, and output order always matches input order.
//! Requests are sequential per client, so shard-level concurrency bounds
//! the number of in-flight requests.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingProvider};
use crate::corpus::Document;

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub backbone_id: Option<String>,
    /// Documents per request; the service side typically pins this to its
    /// own GPU batch, 1000 is the conventional default.
    pub batch_size: usize,
    /// Expected embedding width; learned from the first response when None.
    pub dim: Option<usize>,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            backbone_id: None,
            batch_size: 1000,
            dim: None,
            max_retries: 3,
            initial_backoff: Duration::from_millis(200),
            max_backoff: Duration::from_secs(10),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

pub struct RemoteEmbedder {
    endpoint: String,
    backbone_id: String,
    options: RemoteOptions,
    client: reqwest::blocking::Client,
    expected_dim: std::sync::Mutex<Option<usize>>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: String, options: RemoteOptions) -> Self {
        let backbone_id = options
            .backbone_id
            .clone()
            .unwrap_or_else(|| endpoint.clone());
        let client = reqwest::blocking::Client::builder()
            .timeout(options.timeout)
            .build()
            .expect("HTTP client construction cannot fail with these options");
        Self {
            endpoint,
            backbone_id,
            expected_dim: std::sync::Mutex::new(options.dim),
            options,
            client,
        }
    }

    fn post_batch(&self, texts: Vec<&str>) -> Result<Vec<Vec<f32>>, String> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| format!("transport: {e}"))?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("status: {status}"));
        }
        let body: EmbedResponse = response
            .json()
            .map_err(|e| format!("body: {e}"))?;
        Ok(body.embeddings)
    }

    fn retryable(message: &str) -> bool {
        if let Some(rest) = message.strip_prefix("status: ") {
            let code: u16 = rest
                .split_whitespace()
                .next()
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            return code == 429 || (500..600).contains(&code);
        }
        message.starts_with("transport:")
    }

    fn embed_chunk(&self, docs: &[Document]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        let mut backoff = self.options.initial_backoff;
        let mut attempts = 0u32;
        let embeddings = loop {
            attempts += 1;
            match self.post_batch(texts.clone()) {
                Ok(embeddings) => break embeddings,
                Err(message) => {
                    let out_of_budget = attempts > self.options.max_retries;
                    if out_of_budget || !Self::retryable(&message) {
                        return Err(EmbeddingError::RequestFailed {
                            attempts,
                            doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
                            message,
                        });
                    }
                    log::warn!(
                        "embedding request failed (attempt {attempts}): {message}; retrying in {backoff:?}"
                    );
                    std::thread::sleep(backoff);
                    backoff = (backoff * 2).min(self.options.max_backoff);
                }
            }
        };
        if embeddings.len() != docs.len() {
            return Err(EmbeddingError::ResponseShape(format!(
                "requested {} embeddings, got {}",
                docs.len(),
                embeddings.len()
            )));
        }
        let mut expected = self.expected_dim.lock().unwrap();
        for (doc, values) in docs.iter().zip(&embeddings) {
            match *expected {
                None => *expected = Some(values.len()),
                Some(dim) if values.len() != dim => {
                    return Err(EmbeddingError::DimMismatch {
                        expected: dim,
                        actual: values.len(),
                    })
                }
                _ => {}
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite(doc.id.clone()));
            }
        }
        Ok(embeddings)
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn backbone_id(&self) -> &str {
        &self.backbone_id
    }

    fn dim(&self) -> Option<usize> {
        *self.expected_dim.lock().unwrap()
    }

    fn embed_batch(&self, docs: &[Document]) -> Result<Vec<Vec<f32>>, EmbeddingError> {
        let mut out = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(self.options.batch_size.max(1)) {
            out.extend(self.embed_chunk(chunk)?);
        }
        Ok(out)
    }
}
