//! Document model and JSONL shard streaming.
//!
//! Shards are UTF-8 JSON-per-line files with required keys `id`, `text`,
//! `lang` and an optional `token_count`; unknown keys ride along and are
//! preserved on passthrough writes. Parsing is streaming: one record in
//! memory at a time, malformed lines counted and reported with their line
//! number without aborting the shard.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    InvalidRecord { line: u64, reason: String },
    #[error("JSON serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl CorpusError {
    /// Per-record errors let the shard continue; I/O errors are fatal.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, CorpusError::InvalidRecord { .. })
    }
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub lang: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
    /// Unknown input keys, preserved on passthrough writes.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, lang: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            lang: lang.into(),
            token_count: None,
            extra: serde_json::Map::new(),
        }
    }
}

/// Upstream token count when present, otherwise ceil(chars / 4).
pub fn estimate_tokens(doc: &Document) -> u64 {
    match doc.token_count {
        Some(n) => n,
        None => (doc.text.chars().count() as u64).div_ceil(4),
    }
}

/// Per-shard accounting; additive across shards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardStats {
    pub documents_read: u64,
    pub documents_invalid: u64,
    pub tokens_read: u64,
}

impl ShardStats {
    pub fn merge(&mut self, other: &ShardStats) {
        self.documents_read += other.documents_read;
        self.documents_invalid += other.documents_invalid;
        self.tokens_read += other.tokens_read;
    }
}

impl std::ops::Add for ShardStats {
    type Output = ShardStats;
    fn add(mut self, other: ShardStats) -> ShardStats {
        self.merge(&other);
        self
    }
}

/// Streaming shard reader.
///
/// Yields one `Result<Document, CorpusError>` per record. Invalid records
/// (bad JSON, bad UTF-8, empty or duplicate ids) surface as
/// `CorpusError::InvalidRecord` and parsing continues; an I/O error ends
/// the stream. Whitespace-only lines are skipped without counting.
/// Memory stays bounded by one record: lines are pulled lazily and only
/// record ids are retained (for duplicate detection).
pub struct ShardReader<R: BufRead> {
    reader: R,
    line_no: u64,
    stats: ShardStats,
    seen_ids: HashSet<String>,
    done: bool,
    buf: Vec<u8>,
}

impl<R: BufRead> ShardReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            line_no: 0,
            stats: ShardStats::default(),
            seen_ids: HashSet::new(),
            done: false,
            buf: Vec::new(),
        }
    }

    /// Snapshot of the running stats; final once the iterator is exhausted.
    pub fn stats(&self) -> ShardStats {
        self.stats
    }

    fn parse_line(&mut self) -> Result<Document, CorpusError> {
        let line = std::str::from_utf8(&self.buf).map_err(|e| CorpusError::InvalidRecord {
            line: self.line_no,
            reason: format!("invalid UTF-8: {e}"),
        })?;
        let doc: Document =
            serde_json::from_str(line).map_err(|e| CorpusError::InvalidRecord {
                line: self.line_no,
                reason: e.to_string(),
            })?;
        if doc.id.is_empty() {
            return Err(CorpusError::InvalidRecord {
                line: self.line_no,
                reason: "empty id".into(),
            });
        }
        if !self.seen_ids.insert(doc.id.clone()) {
            return Err(CorpusError::InvalidRecord {
                line: self.line_no,
                reason: format!("duplicate id '{}'", doc.id),
            });
        }
        Ok(doc)
    }
}

impl<R: BufRead> Iterator for ShardReader<R> {
    type Item = Result<Document, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(CorpusError::Io(e)));
                }
            }
            if self.buf.last() == Some(&b'\n') {
                self.buf.pop();
                if self.buf.last() == Some(&b'\r') {
                    self.buf.pop();
                }
            }
            if self.buf.iter().all(|b| b.is_ascii_whitespace()) {
                continue;
            }
            self.line_no += 1;
            self.stats.documents_read += 1;
            return Some(match self.parse_line() {
                Ok(doc) => {
                    self.stats.tokens_read += estimate_tokens(&doc);
                    Ok(doc)
                }
                Err(e) => {
                    self.stats.documents_invalid += 1;
                    Err(e)
                }
            });
        }
    }
}

/// Parses a whole shard, splitting documents from per-record errors.
/// The first fatal I/O error aborts.
pub fn parse_shard_collect(
    reader: impl BufRead,
) -> Result<(Vec<Document>, Vec<CorpusError>, ShardStats), CorpusError> {
    let mut shard = ShardReader::new(reader);
    let mut docs = Vec::new();
    let mut errors = Vec::new();
    for item in &mut shard {
        match item {
            Ok(doc) => docs.push(doc),
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => errors.push(e),
        }
    }
    let stats = shard.stats();
    Ok((docs, errors, stats))
}

/// Writes one document as a JSON line, unknown keys included.
pub fn write_document(writer: &mut impl Write, doc: &Document) -> Result<(), CorpusError> {
    serde_json::to_writer(&mut *writer, doc)?;
    writer.write_all(b"\n")?;
    Ok(())
}
