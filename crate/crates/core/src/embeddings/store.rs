//! Persistent binary store of precomputed embedding vectors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "JQLE" | version u32 | dim u32 | count u64
//! backbone_id: u16 length + UTF-8 bytes
//! count records: doc_id (u16 length + UTF-8) followed by dim f32 values
//! count index entries: doc_id (u16 length + UTF-8) + record offset u64
//! ```
//!
//! Offsets in the index point at the record's doc_id length prefix. The
//! format has no index-offset field, so `open` hops across the records by
//! their length prefixes (reading a few bytes per record, never the
//! vectors), then reads the trailing index and cross-checks it against the
//! scan. Lookups afterwards are a single positioned read per vector, safe
//! from any number of threads.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::Path;

use super::EmbeddingError;

const MAGIC: &[u8; 4] = b"JQLE";
const VERSION: u32 = 1;
/// Byte offset of the count field, patched after a streaming write.
const COUNT_OFFSET: u64 = 12;

fn format_err(offset: u64, reason: impl Into<String>) -> EmbeddingError {
    EmbeddingError::Format {
        offset,
        reason: reason.into(),
    }
}

/// Incremental store writer; `finish` seals the file.
pub struct StoreWriter {
    writer: BufWriter<File>,
    dim: usize,
    pos: u64,
    records: Vec<(String, u64)>, // (doc_id, record offset)
    seen: HashMap<String, ()>,
}

impl StoreWriter {
    pub fn create(
        path: impl AsRef<Path>,
        backbone_id: &str,
        dim: usize,
    ) -> Result<Self, EmbeddingError> {
        assert!(dim >= 1, "dim must be >= 1");
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        let id_bytes = backbone_id.as_bytes();
        let id_len = u16::try_from(id_bytes.len())
            .map_err(|_| format_err(20, "backbone_id longer than u16"))?;
        writer.write_all(MAGIC)?;
        writer.write_all(&VERSION.to_le_bytes())?;
        writer.write_all(&(dim as u32).to_le_bytes())?;
        writer.write_all(&0u64.to_le_bytes())?; // count, patched in finish
        writer.write_all(&id_len.to_le_bytes())?;
        writer.write_all(id_bytes)?;
        let pos = 22 + id_bytes.len() as u64;
        Ok(Self {
            writer,
            dim,
            pos,
            records: Vec::new(),
            seen: HashMap::new(),
        })
    }

    pub fn add(&mut self, doc_id: &str, values: &[f32]) -> Result<(), EmbeddingError> {
        if values.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(doc_id.to_string()));
        }
        if self.seen.insert(doc_id.to_string(), ()).is_some() {
            return Err(EmbeddingError::DuplicateId(doc_id.to_string()));
        }
        let id_bytes = doc_id.as_bytes();
        let id_len = u16::try_from(id_bytes.len())
            .map_err(|_| format_err(self.pos, "doc_id longer than u16"))?;
        self.records.push((doc_id.to_string(), self.pos));
        self.writer.write_all(&id_len.to_le_bytes())?;
        self.writer.write_all(id_bytes)?;
        for v in values {
            self.writer.write_all(&v.to_le_bytes())?;
        }
        self.pos += 2 + id_bytes.len() as u64 + 4 * self.dim as u64;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the trailing index, patches the record count and flushes.
    pub fn finish(mut self) -> Result<(), EmbeddingError> {
        for (doc_id, offset) in &self.records {
            let id_bytes = doc_id.as_bytes();
            self.writer.write_all(&(id_bytes.len() as u16).to_le_bytes())?;
            self.writer.write_all(id_bytes)?;
            self.writer.write_all(&offset.to_le_bytes())?;
        }
        self.writer.flush()?;
        let file = self.writer.get_mut();
        file.seek(SeekFrom::Start(COUNT_OFFSET))?;
        file.write_all(&(self.records.len() as u64).to_le_bytes())?;
        file.sync_all()?;
        Ok(())
    }
}

/// Writes a whole store in one call.
pub fn write_store<I, V>(
    path: impl AsRef<Path>,
    backbone_id: &str,
    dim: usize,
    vectors: I,
) -> Result<usize, EmbeddingError>
where
    I: IntoIterator<Item = (V, Vec<f32>)>,
    V: AsRef<str>,
{
    let mut writer = StoreWriter::create(path, backbone_id, dim)?;
    for (doc_id, values) in vectors {
        writer.add(doc_id.as_ref(), &values)?;
    }
    let written = writer.len();
    writer.finish()?;
    Ok(written)
}

/// Read handle with random access by doc id.
#[derive(Debug)]
pub struct EmbeddingStore {
    file: File,
    backbone_id: String,
    dim: usize,
    /// (doc_id, values offset) in record order.
    records: Vec<(String, u64)>,
    index: HashMap<String, u64>, // doc_id -> values offset
}

impl EmbeddingStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let mut file = File::open(path)?;
        let file_len = file.metadata()?.len();

        let mut header = [0u8; 22];
        file.read_exact(&mut header)
            .map_err(|_| format_err(0, "file too short for header"))?;
        if &header[0..4] != MAGIC {
            return Err(format_err(0, "bad magic bytes"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(format_err(8, "dim must be >= 1"));
        }
        let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
        let backbone_len = u16::from_le_bytes(header[20..22].try_into().unwrap()) as usize;
        let mut backbone_bytes = vec![0u8; backbone_len];
        file.read_exact(&mut backbone_bytes)
            .map_err(|_| format_err(22, "truncated backbone_id"))?;
        let backbone_id = String::from_utf8(backbone_bytes)
            .map_err(|_| format_err(22, "backbone_id is not UTF-8"))?;

        // Hop across records via their length prefixes.
        let mut pos = 22 + backbone_len as u64;
        let mut records = Vec::with_capacity(count as usize);
        let mut index = HashMap::with_capacity(count as usize);
        for i in 0..count {
            if pos + 2 > file_len {
                return Err(format_err(pos, format!("truncated record {i}")));
            }
            let mut len_buf = [0u8; 2];
            file.read_exact_at(&mut len_buf, pos)?;
            let id_len = u16::from_le_bytes(len_buf) as u64;
            let values_offset = pos + 2 + id_len;
            let record_end = values_offset + 4 * dim as u64;
            if record_end > file_len {
                return Err(format_err(pos, format!("truncated record {i}")));
            }
            let mut id_bytes = vec![0u8; id_len as usize];
            file.read_exact_at(&mut id_bytes, pos + 2)?;
            let doc_id = String::from_utf8(id_bytes)
                .map_err(|_| format_err(pos + 2, "doc_id is not UTF-8"))?;
            if index.insert(doc_id.clone(), values_offset).is_some() {
                return Err(EmbeddingError::DuplicateId(doc_id));
            }
            records.push((doc_id, pos));
            pos = record_end;
        }

        // Cross-check the trailing index against the scan.
        file.seek(SeekFrom::Start(pos))?;
        let mut tail = std::io::BufReader::new(&file);
        for (doc_id, record_offset) in &records {
            let mut len_buf = [0u8; 2];
            tail.read_exact(&mut len_buf)
                .map_err(|_| format_err(pos, "truncated index block"))?;
            let id_len = u16::from_le_bytes(len_buf) as usize;
            let mut id_bytes = vec![0u8; id_len];
            tail.read_exact(&mut id_bytes)
                .map_err(|_| format_err(pos, "truncated index block"))?;
            let mut offset_buf = [0u8; 8];
            tail.read_exact(&mut offset_buf)
                .map_err(|_| format_err(pos, "truncated index block"))?;
            let offset = u64::from_le_bytes(offset_buf);
            if id_bytes != doc_id.as_bytes() || offset != *record_offset {
                return Err(format_err(pos, "index block disagrees with records"));
            }
        }

        let records = records
            .into_iter()
            .map(|(id, _)| {
                let values_offset = index[&id];
                (id, values_offset)
            })
            .collect();

        Ok(Self {
            file,
            backbone_id,
            dim,
            records,
            index,
        })
    }

    pub fn backbone_id(&self) -> &str {
        &self.backbone_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|(id, _)| id.as_str())
    }

    /// Random-access lookup; a missing id is `Ok(None)`, not an error.
    pub fn get(&self, doc_id: &str) -> Result<Option<Vec<f32>>, EmbeddingError> {
        let Some(&offset) = self.index.get(doc_id) else {
            return Ok(None);
        };
        Ok(Some(self.read_values(offset)?))
    }

    /// Record iteration in write order.
    pub fn iter(&self) -> impl Iterator<Item = Result<(String, Vec<f32>), EmbeddingError>> + '_ {
        self.records
            .iter()
            .map(|(id, offset)| Ok((id.clone(), self.read_values(*offset)?)))
    }

    fn read_values(&self, values_offset: u64) -> Result<Vec<f32>, EmbeddingError> {
        let mut buf = vec![0u8; 4 * self.dim];
        self.file.read_exact_at(&mut buf, values_offset)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
