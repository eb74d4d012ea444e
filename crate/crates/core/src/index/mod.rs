//! Immutable hybrid index: keyword postings and a vector store over one chunk set.

pub mod rerank;
pub mod search;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::EmbeddingVector;
use crate::ingest::Chunk;
use crate::text::tokenize;

pub use rerank::{LlmReranker, OverlapReranker, Reranker, ZeroReranker};
pub use search::{
    fuse_rrf, keyword_search, rerank, retrieve, vector_search, Candidate, RankedScore, Retrieval,
    RetrievalConfig, RetrievalResult, ScoredChunk, DEFAULT_RERANK_WEIGHT, DEFAULT_RRF_K, DEFAULT_TOP_K,
};

pub const SNAPSHOT_FORMAT: &str = "tutor-index-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("embedding dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid snapshot: {0}")]
    Invalid(String),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error("unsupported snapshot format {format:?} version {version}")]
    Version { format: String, version: u32 },
    #[error("snapshot io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position in [`IndexSnapshot::chunks`].
    pub chunk: usize,
    pub term_frequency: u32,
}

#[derive(Debug, Clone)]
pub struct IndexSnapshot {
    chunks: Vec<Chunk>,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    dimension: usize,
    embedding_model: String,
    created_at: DateTime<Utc>,
    content_hash: String,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    format: String,
    version: u32,
    created_at: DateTime<Utc>,
    embedding_model: String,
    dimension: usize,
    content_hash: String,
    chunks: Vec<Chunk>,
}

impl IndexSnapshot {
    /// Builds postings and checks that every chunk carries an embedding of
    /// `dimension` and that ids and `(path, unit, ordinal)` keys are unique.
    pub fn build(
        chunks: Vec<Chunk>,
        dimension: usize,
        embedding_model: &str,
        created_at: DateTime<Utc>,
    ) -> Result<Self, IndexError> {
        if dimension == 0 {
            return Err(IndexError::Invalid("dimension must be positive".into()));
        }
        let mut by_id = HashMap::with_capacity(chunks.len());
        let mut keys = HashSet::with_capacity(chunks.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(chunks.len());
        for (i, chunk) in chunks.iter().enumerate() {
            match &chunk.embedding {
                None => return Err(IndexError::Invalid(format!("chunk {} has no embedding", chunk.chunk_id))),
                Some(v) if v.dim() != dimension => {
                    return Err(IndexError::DimensionMismatch { expected: dimension, got: v.dim() })
                }
                Some(_) => {}
            }
            if chunk.text.is_empty() {
                return Err(IndexError::Invalid(format!("chunk {} has empty text", chunk.chunk_id)));
            }
            if by_id.insert(chunk.chunk_id.clone(), i).is_some() {
                return Err(IndexError::Invalid(format!("duplicate chunk id {}", chunk.chunk_id)));
            }
            if !keys.insert((chunk.source_path.as_str(), chunk.unit_number, chunk.ordinal)) {
                return Err(IndexError::Invalid(format!(
                    "duplicate chunk position {} unit {} ordinal {}",
                    chunk.source_path, chunk.unit_number, chunk.ordinal
                )));
            }
            let tokens = tokenize(&chunk.text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for token in tokens {
                *tf.entry(token).or_default() += 1;
            }
            for (term, term_frequency) in tf {
                postings.entry(term).or_default().push(Posting { chunk: i, term_frequency });
            }
        }
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            doc_lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / doc_lengths.len() as f64
        };
        let content_hash = content_hash(&chunks, dimension, embedding_model);
        Ok(Self {
            chunks,
            postings,
            doc_lengths,
            avg_doc_length,
            dimension,
            embedding_model: embedding_model.to_owned(),
            created_at,
            content_hash,
            by_id,
        })
    }

    pub fn empty(dimension: usize, embedding_model: &str) -> Self {
        Self::build(Vec::new(), dimension, embedding_model, Utc::now()).expect("empty snapshot is valid")
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, index: usize) -> &Chunk {
        &self.chunks[index]
    }

    pub fn chunk_by_id(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn vector(&self, index: usize) -> &EmbeddingVector {
        self.chunks[index].embedding.as_ref().expect("validated at build")
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn doc_length(&self, index: usize) -> u32 {
        self.doc_lengths[index]
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedding_model(&self) -> &str {
        &self.embedding_model
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn to_json(&self) -> String {
        let file = SnapshotFile {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            created_at: self.created_at,
            embedding_model: self.embedding_model.clone(),
            dimension: self.dimension,
            content_hash: self.content_hash.clone(),
            chunks: self.chunks.clone(),
        };
        serde_json::to_string(&file).expect("snapshot serializes")
    }

    /// Parses and re-validates a snapshot; the stored content hash must match.
    pub fn from_json(json: &str) -> Result<Self, IndexError> {
        let file: SnapshotFile =
            serde_json::from_str(json).map_err(|e| IndexError::Corrupt(e.to_string()))?;
        if file.format != SNAPSHOT_FORMAT || file.version != SNAPSHOT_VERSION {
            return Err(IndexError::Version { format: file.format, version: file.version });
        }
        let snapshot = Self::build(file.chunks, file.dimension, &file.embedding_model, file.created_at)?;
        if snapshot.content_hash != file.content_hash {
            return Err(IndexError::Corrupt(format!(
                "content hash {} does not match stored {}",
                snapshot.content_hash, file.content_hash
            )));
        }
        Ok(snapshot)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// SHA-256 over chunks in `(path, unit, ordinal)` order, so the hash does not
/// depend on insertion order or creation time.
fn content_hash(chunks: &[Chunk], dimension: usize, embedding_model: &str) -> String {
    let mut ordered: Vec<&Chunk> = chunks.iter().collect();
    ordered.sort_by(|a, b| {
        (&a.source_path, a.unit_number, a.ordinal).cmp(&(&b.source_path, b.unit_number, b.ordinal))
    });
    let mut hasher = Sha256::new();
    hasher.update((dimension as u64).to_le_bytes());
    hasher.update(embedding_model.as_bytes());
    hasher.update([0]);
    for chunk in ordered {
        hasher.update(chunk.chunk_id.as_bytes());
        hasher.update(chunk.source_path.as_bytes());
        hasher.update([0]);
        hasher.update(chunk.unit_number.to_le_bytes());
        hasher.update(chunk.ordinal.to_le_bytes());
        hasher.update((chunk.text.len() as u64).to_le_bytes());
        hasher.update(chunk.text.as_bytes());
        if let Some(v) = &chunk.embedding {
            for x in v.values() {
                hasher.update(x.to_le_bytes());
            }
        }
    }
    hex::encode(hasher.finalize())
}
