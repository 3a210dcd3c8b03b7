//! Article embeddings: the `EMB1` file format, a hashed bag-of-words
//! fallback embedder, and Sum/Mean aggregation of a day's vectors.
//!
//! `EMB1` layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "EMB1"
//! model_len  u16      followed by model_len bytes of UTF-8 model id
//! dim        u32
//! count      u64
//! count x { id_len u16, id_len bytes UTF-8 id, dim x f32 }
//! crc32      u32      IEEE CRC-32 of every byte after the magic and before the crc
//! ```
//!
//! Several records may share an article id (long texts split into chunks);
//! each one is a separate vector for aggregation.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::newscorpus::NewsArticle;
use crate::text::{fnv1a64, tokenize};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
/// Model id recorded for [`hash_embed`] vectors.
pub const HASH_MODEL_ID: &str = "hash-bow-fnv1a-v1";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic {0:?}, expected EMB1")]
    BadMagic([u8; 4]),
    #[error("truncated embedding stream: {0}")]
    Truncated(&'static str),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("model id mismatch: expected {expected:?}, found {found:?}")]
    ModelMismatch { expected: String, found: String },
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("non-finite value in record {0:?}")]
    NonFinite(String),
    #[error("{0} is too long for a u16 length prefix")]
    TooLong(&'static str),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("text has no tokens to embed")]
    EmptyText,
    #[error("token hashes cancelled to a zero vector")]
    Degenerate,
    #[error("cannot aggregate an empty vector set")]
    EmptySet,
    #[error("unknown aggregation mode {0:?}")]
    UnknownMode(String),
    #[error("trailing bytes after checksum")]
    TrailingBytes,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EmbeddingError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub article_id: String,
    pub model_id: String,
    pub values: Vec<f64>,
}

impl EmbeddingRecord {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// In-memory provider of article vectors with one model id and one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    model_id: String,
    dim: usize,
    records: Vec<EmbeddingRecord>,
    by_id: HashMap<String, Vec<usize>>,
}

impl EmbeddingStore {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(EmbeddingStore { model_id: model_id.into(), dim, records: Vec::new(), by_id: HashMap::new() })
    }

    /// Builds a store from records that must agree on model id and dimension.
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let first = records.first().ok_or(EmbeddingError::EmptySet)?;
        let mut store = EmbeddingStore::new(first.model_id.clone(), first.dim())?;
        for r in records {
            store.push(r)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.dim() != self.dim {
            return Err(EmbeddingError::DimMismatch { expected: self.dim, found: record.dim() });
        }
        if record.model_id != self.model_id {
            return Err(EmbeddingError::ModelMismatch {
                expected: self.model_id.clone(),
                found: record.model_id,
            });
        }
        if record.values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(record.article_id));
        }
        self.by_id.entry(record.article_id.clone()).or_default().push(self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// Hash-embeds `title + "\n" + body` of every article.
    pub fn from_articles_hashed(articles: &[NewsArticle], dim: usize) -> Result<Self> {
        let mut store = EmbeddingStore::new(HASH_MODEL_ID, dim)?;
        for a in articles {
            let mut rec = hash_embed(&a.embedding_text(), dim)?;
            rec.article_id = a.id.clone();
            store.push(rec)?;
        }
        Ok(store)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
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

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn contains(&self, article_id: &str) -> bool {
        self.by_id.contains_key(article_id)
    }

    /// All vectors recorded for `article_id`, in file order.
    pub fn vectors(&self, article_id: &str) -> Option<Vec<&[f64]>> {
        self.by_id
            .get(article_id)
            .map(|idx| idx.iter().map(|&i| self.records[i].values.as_slice()).collect())
    }

    /// One vector per article: the mean of its chunk vectors.
    pub fn article_vector(&self, article_id: &str) -> Option<Vec<f64>> {
        let vs = self.vectors(article_id)?;
        aggregate(&vs, AggregationMode::Mean).ok()
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(EmbeddingError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| EmbeddingError::Utf8(what))
    }
}

/// Reads and validates an `EMB1` stream.
pub fn read_embedding_file<R: Read>(mut reader: R) -> Result<EmbeddingStore> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    if buf.len() < 4 {
        return Err(EmbeddingError::Truncated("magic"));
    }
    let magic: [u8; 4] = buf[..4].try_into().unwrap();
    if &magic != EMB_MAGIC {
        return Err(EmbeddingError::BadMagic(magic));
    }
    if buf.len() < 8 {
        return Err(EmbeddingError::Truncated("checksum"));
    }
    let payload = &buf[4..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());

    let mut cur = Cursor { buf: payload, pos: 0 };
    let model_id = cur.string("model id")?;
    let dim = cur.u32("dim")? as usize;
    let count = cur.u64("count")?;
    if dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    // Structural problems are reported before the checksum so truncation reads as truncation.
    let mut records = Vec::new();
    for _ in 0..count {
        let article_id = cur.string("record id")?;
        let raw = cur.take(dim * 4, "record values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        records.push(EmbeddingRecord { article_id, model_id: model_id.clone(), values });
    }
    if cur.pos != payload.len() {
        return Err(EmbeddingError::TrailingBytes);
    }
    let computed = crc32fast::hash(payload);
    if computed != stored {
        return Err(EmbeddingError::Checksum { stored, computed });
    }
    let mut store = EmbeddingStore::new(model_id, dim)?;
    for r in records {
        store.push(r)?;
    }
    Ok(store)
}

/// Writes `store` as `EMB1`. Values are narrowed to `f32`.
pub fn write_embedding_file<W: Write>(store: &EmbeddingStore, mut out: W) -> Result<()> {
    let mut payload = Vec::with_capacity(16 + store.len() * (store.dim() * 4 + 16));
    let model = store.model_id().as_bytes();
    let model_len = u16::try_from(model.len()).map_err(|_| EmbeddingError::TooLong("model id"))?;
    payload.extend_from_slice(&model_len.to_le_bytes());
    payload.extend_from_slice(model);
    payload.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    payload.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for rec in store.records() {
        let id = rec.article_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| EmbeddingError::TooLong("article id"))?;
        payload.extend_from_slice(&id_len.to_le_bytes());
        payload.extend_from_slice(id);
        for &v in &rec.values {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(EMB_MAGIC)?;
    out.write_all(&payload)?;
    out.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    Ok(())
}

/// Hashed bag-of-words vector: each token adds ±1 at `hash % dim`, with the
/// sign taken from the top hash bit, then the vector is L2-normalized.
pub fn hash_embed(text: &str, dim: usize) -> Result<EmbeddingRecord> {
    if dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let mut values = vec![0.0f64; dim];
    for t in &tokens {
        let h = fnv1a64(t.as_bytes());
        let slot = (h % dim as u64) as usize;
        values[slot] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbeddingError::Degenerate);
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Ok(EmbeddingRecord { article_id: String::new(), model_id: HASH_MODEL_ID.to_string(), values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    Sum,
    #[default]
    Mean,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Sum => "sum",
            AggregationMode::Mean => "mean",
        })
    }
}

impl FromStr for AggregationMode {
    type Err = EmbeddingError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(AggregationMode::Sum),
            "mean" => Ok(AggregationMode::Mean),
            _ => Err(EmbeddingError::UnknownMode(s.to_string())),
        }
    }
}

/// Coordinate-wise sum or arithmetic mean of equal-length vectors.
pub fn aggregate<V: AsRef<[f64]>>(vectors: &[V], mode: AggregationMode) -> Result<Vec<f64>> {
    let first = vectors.first().ok_or(EmbeddingError::EmptySet)?.as_ref();
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(EmbeddingError::DimMismatch { expected: dim, found: v.len() });
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    if mode == AggregationMode::Mean {
        let n = vectors.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

/// [`aggregate`] with each input optionally L2-normalized first.
pub fn aggregate_normalized<V: AsRef<[f64]>>(vectors: &[V], mode: AggregationMode, normalize: bool) -> Result<Vec<f64>> {
    if !normalize {
        return aggregate(vectors, mode);
    }
    let unit: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let v = v.as_ref();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter().map(|x| x / n).collect()
            } else {
                v.to_vec()
            }
        })
        .collect();
    aggregate(&unit, mode)
}

pub fn zero_vector(dim: usize) -> Vec<f64> {
    vec![0.0; dim]
}
