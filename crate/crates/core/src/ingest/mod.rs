//! Course materials to chunks to an [`IndexSnapshot`].

pub mod corpus_file;

use std::collections::{BTreeMap, HashSet};

use chrono::{Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, Gateway, GatewayError};
use crate::index::{IndexError, IndexSnapshot};

pub use corpus_file::{load_corpus_dir, parse_corpus_file};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid document {path:?}: {reason}")]
    InvalidDocument { path: String, reason: String },
    #[error("invalid chunk policy: {0}")]
    InvalidPolicy(String),
    #[error("duplicate document paths: {}", .0.join(", "))]
    DuplicatePaths(Vec<String>),
    #[error("embedding failed: {0}")]
    Embedding(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("corpus file {file}: {reason}")]
    Parse { file: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Slides,
    Transcript,
    Script,
    Announcement,
    #[default]
    Other,
}

impl std::str::FromStr for DocKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slides" => Ok(DocKind::Slides),
            "transcript" => Ok(DocKind::Transcript),
            "script" => Ok(DocKind::Script),
            "announcement" => Ok(DocKind::Announcement),
            "other" => Ok(DocKind::Other),
            other => Err(format!("unknown document kind {other:?}")),
        }
    }
}

/// One slide, page or section of a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub number: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    /// Relative path, quoted verbatim in citations.
    pub path: String,
    pub kind: DocKind,
    pub units: Vec<Unit>,
}

impl SourceDocument {
    pub fn new(path: impl Into<String>, kind: DocKind, units: Vec<Unit>) -> Self {
        Self { path: path.into(), kind, units }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let invalid = |reason: String| IngestError::InvalidDocument { path: self.path.clone(), reason };
        if self.path.trim().is_empty() {
            return Err(invalid("path is empty".into()));
        }
        let mut previous = 0;
        for unit in &self.units {
            if unit.number == 0 {
                return Err(invalid("unit numbers start at 1".into()));
            }
            if unit.number <= previous {
                return Err(invalid(format!(
                    "unit {} follows unit {previous}; numbers must strictly increase",
                    unit.number
                )));
            }
            previous = unit.number;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPolicy {
    pub max_chars: usize,
    pub overlap_chars: usize,
    pub respect_unit_boundaries: bool,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self { max_chars: 2000, overlap_chars: 200, respect_unit_boundaries: true }
    }
}

impl ChunkPolicy {
    pub fn new(max_chars: usize, overlap_chars: usize) -> Result<Self, IngestError> {
        let policy = Self { max_chars, overlap_chars, ..Self::default() };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.max_chars == 0 {
            return Err(IngestError::InvalidPolicy("max_chars must be positive".into()));
        }
        if self.overlap_chars >= self.max_chars {
            return Err(IngestError::InvalidPolicy(format!(
                "overlap {} must be smaller than max_chars {}",
                self.overlap_chars, self.max_chars
            )));
        }
        Ok(())
    }

    fn stride(&self) -> usize {
        self.max_chars - self.overlap_chars
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub source_path: String,
    pub unit_number: u32,
    /// Position of the chunk within its unit, from 0.
    pub ordinal: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingVector>,
}

impl Chunk {
    pub fn new(source_path: &str, unit_number: u32, ordinal: u32, text: String) -> Self {
        Self {
            chunk_id: chunk_id(source_path, unit_number, ordinal, &text),
            source_path: source_path.to_owned(),
            unit_number,
            ordinal,
            text,
            embedding: None,
        }
    }
}

/// Stable id: first 16 hex digits of SHA-256 over the chunk's identity and text.
pub fn chunk_id(source_path: &str, unit_number: u32, ordinal: u32, text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(source_path.as_bytes());
    hasher.update([0]);
    hasher.update(unit_number.to_le_bytes());
    hasher.update(ordinal.to_le_bytes());
    hasher.update(text.as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// Character windows `[start, end)` of `max_chars`, advancing by
/// `max_chars - overlap_chars`; the last window ends at `len`.
pub fn window_bounds(len: usize, policy: &ChunkPolicy) -> Vec<(usize, usize)> {
    let mut windows = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + policy.max_chars).min(len);
        windows.push((start, end));
        if end == len {
            break;
        }
        start += policy.stride();
    }
    windows
}

fn char_slice(chars: &[char], start: usize, end: usize) -> String {
    chars[start..end].iter().collect()
}

pub fn chunk_document(doc: &SourceDocument, policy: &ChunkPolicy) -> Result<Vec<Chunk>, IngestError> {
    doc.validate()?;
    policy.validate()?;
    let units: Vec<&Unit> = doc
        .units
        .iter()
        .filter(|u| {
            let empty = u.text.trim().is_empty();
            if empty {
                log::warn!("{}: skipping empty unit {}", doc.path, u.number);
            }
            !empty
        })
        .collect();

    if policy.respect_unit_boundaries {
        let mut chunks = Vec::new();
        for unit in units {
            let chars: Vec<char> = unit.text.chars().collect();
            for (ordinal, (start, end)) in window_bounds(chars.len(), policy).into_iter().enumerate() {
                chunks.push(Chunk::new(&doc.path, unit.number, ordinal as u32, char_slice(&chars, start, end)));
            }
        }
        return Ok(chunks);
    }

    // Windows run over the units joined by blank lines; each chunk is
    // attributed to the unit its first character falls in.
    let mut joined: Vec<char> = Vec::new();
    let mut unit_starts: Vec<(usize, u32)> = Vec::new();
    for (i, unit) in units.iter().enumerate() {
        if i > 0 {
            joined.extend("\n\n".chars());
        }
        unit_starts.push((joined.len(), unit.number));
        joined.extend(unit.text.chars());
    }
    let mut per_unit: BTreeMap<u32, u32> = BTreeMap::new();
    let mut chunks = Vec::new();
    for (start, end) in window_bounds(joined.len(), policy) {
        let unit_number = unit_starts
            .iter()
            .take_while(|(offset, _)| *offset <= start)
            .last()
            .map(|(_, n)| *n)
            .expect("window starts inside the joined text");
        let ordinal = per_unit.entry(unit_number).or_default();
        chunks.push(Chunk::new(&doc.path, unit_number, *ordinal, char_slice(&joined, start, end)));
        *ordinal += 1;
    }
    Ok(chunks)
}

const EMBED_BATCH: usize = 64;

fn check_unique_paths(docs: &[SourceDocument]) -> Result<(), IngestError> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = docs
        .iter()
        .filter(|d| !seen.insert(d.path.as_str()))
        .map(|d| d.path.clone())
        .collect();
    if dups.is_empty() {
        return Ok(());
    }
    dups.sort();
    dups.dedup();
    Err(IngestError::DuplicatePaths(dups))
}

/// Chunks and embeds documents in path order. Fails without side effects.
fn chunk_and_embed(
    docs: &[SourceDocument],
    policy: &ChunkPolicy,
    gateway: &Gateway,
) -> Result<Vec<Chunk>, IngestError> {
    check_unique_paths(docs)?;
    policy.validate()?;
    let mut ordered: Vec<&SourceDocument> = docs.iter().collect();
    ordered.sort_by(|a, b| a.path.cmp(&b.path));
    let mut chunks = Vec::new();
    for doc in ordered {
        chunks.extend(chunk_document(doc, policy)?);
    }
    for batch in chunks.chunks_mut(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
        let vectors = gateway.embed(&texts)?;
        for (chunk, vector) in batch.iter_mut().zip(vectors) {
            chunk.embedding = Some(vector);
        }
    }
    Ok(chunks)
}

pub fn ingest_corpus(
    docs: &[SourceDocument],
    policy: &ChunkPolicy,
    gateway: &Gateway,
) -> Result<IndexSnapshot, IngestError> {
    let chunks = chunk_and_embed(docs, policy, gateway)?;
    let embedder = gateway.embedder();
    Ok(IndexSnapshot::build(chunks, embedder.dimension(), &embedder.model_id(), Utc::now())?)
}

/// Builds a new snapshot in which every document in `new_docs` replaces any
/// existing document with the same path. `snapshot` is left untouched.
pub fn update_corpus(
    snapshot: &IndexSnapshot,
    new_docs: &[SourceDocument],
    policy: &ChunkPolicy,
    gateway: &Gateway,
) -> Result<IndexSnapshot, IngestError> {
    let embedder = gateway.embedder();
    if embedder.dimension() != snapshot.dimension() {
        return Err(IndexError::DimensionMismatch {
            expected: snapshot.dimension(),
            got: embedder.dimension(),
        }
        .into());
    }
    let fresh = chunk_and_embed(new_docs, policy, gateway)?;
    let replaced: HashSet<&str> = new_docs.iter().map(|d| d.path.as_str()).collect();
    let mut chunks: Vec<Chunk> = snapshot
        .chunks()
        .iter()
        .filter(|c| !replaced.contains(c.source_path.as_str()))
        .cloned()
        .collect();
    chunks.extend(fresh);
    chunks.sort_by(|a, b| {
        (&a.source_path, a.unit_number, a.ordinal).cmp(&(&b.source_path, b.unit_number, b.ordinal))
    });
    // Strictly later than the input so consumers can order snapshots by time.
    let created_at = Utc::now().max(snapshot.created_at() + Duration::microseconds(1));
    Ok(IndexSnapshot::build(chunks, snapshot.dimension(), snapshot.embedding_model(), created_at)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::{EchoChat, HashEmbedder, UnavailableEmbedder};
    use crate::gateway::RetryPolicy;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn unit(number: u32, text: &str) -> Unit {
        Unit { number, text: text.to_owned() }
    }

    fn gateway() -> Gateway {
        Gateway::new(Arc::new(EchoChat), Arc::new(HashEmbedder::new(8)))
    }

    #[test]
    fn one_chunk_per_short_slide() {
        let slide = "x".repeat(500);
        let doc = SourceDocument::new(
            "slides/w1.pdf",
            DocKind::Slides,
            vec![unit(1, &slide), unit(2, &slide), unit(3, &slide)],
        );
        let chunks = chunk_document(&doc, &ChunkPolicy::default()).unwrap();
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks.iter().map(|c| c.unit_number).collect::<Vec<_>>(), [1, 2, 3]);
        assert!(chunks.iter().all(|c| c.ordinal == 0));
    }

    #[test]
    fn long_unit_windows() {
        let text: String = (0..2500).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let doc = SourceDocument::new("notes.txt", DocKind::Other, vec![unit(1, &text)]);
        let policy = ChunkPolicy::new(1000, 200).unwrap();
        let chunks = chunk_document(&doc, &policy).unwrap();
        assert_eq!(window_bounds(2500, &policy), [(0, 1000), (800, 1800), (1600, 2500)]);
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[1].text, text[800..1800]);
        assert_eq!(chunks[2].text, text[1600..]);
        assert_eq!(chunks.iter().map(|c| c.ordinal).collect::<Vec<_>>(), [0, 1, 2]);
    }

    #[test]
    fn zero_units_and_empty_units() {
        let empty = SourceDocument::new("a", DocKind::Other, vec![]);
        assert!(chunk_document(&empty, &ChunkPolicy::default()).unwrap().is_empty());
        let blank = SourceDocument::new("a", DocKind::Other, vec![unit(1, "  \n"), unit(2, "hi")]);
        let chunks = chunk_document(&blank, &ChunkPolicy::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].unit_number, 2);
    }

    #[test]
    fn invalid_documents_and_policies() {
        let unordered = SourceDocument::new("a", DocKind::Other, vec![unit(2, "x"), unit(2, "y")]);
        assert!(chunk_document(&unordered, &ChunkPolicy::default()).is_err());
        let no_path = SourceDocument::new(" ", DocKind::Other, vec![]);
        assert!(no_path.validate().is_err());
        assert!(ChunkPolicy::new(100, 100).is_err());
        assert!(ChunkPolicy::new(0, 0).is_err());
    }

    #[test]
    fn unbounded_chunks_may_span_units() {
        let doc = SourceDocument::new("a", DocKind::Other, vec![unit(1, "aaaa"), unit(2, "bbbb")]);
        let policy = ChunkPolicy { max_chars: 6, overlap_chars: 1, respect_unit_boundaries: false };
        let chunks = chunk_document(&doc, &policy).unwrap();
        // joined = "aaaa\n\nbbbb": windows [0,6) [5,10)
        assert_eq!(chunks.len(), 2);
        assert_eq!((chunks[0].unit_number, chunks[0].text.as_str()), (1, "aaaa\n\n"));
        assert_eq!((chunks[1].unit_number, chunks[1].ordinal), (1, 1));
    }

    #[test]
    fn chunk_ids_are_stable() {
        let a = Chunk::new("p", 1, 0, "text".into());
        let b = Chunk::new("p", 1, 0, "text".into());
        assert_eq!(a.chunk_id, b.chunk_id);
        assert_eq!(a.chunk_id.len(), 16);
        assert_ne!(a.chunk_id, Chunk::new("p", 1, 1, "text".into()).chunk_id);
    }

    #[test]
    fn duplicate_paths_rejected() {
        let d = SourceDocument::new("same.txt", DocKind::Other, vec![unit(1, "x")]);
        let err = ingest_corpus(&[d.clone(), d], &ChunkPolicy::default(), &gateway()).unwrap_err();
        assert!(err.to_string().contains("same.txt"));
    }

    #[test]
    fn embedding_failure_aborts_ingest() {
        let gw = Gateway::new(Arc::new(EchoChat), Arc::new(UnavailableEmbedder { dim: 8 }))
            .with_retry(RetryPolicy::immediate());
        let d = SourceDocument::new("a.txt", DocKind::Other, vec![unit(1, "x")]);
        assert!(matches!(
            ingest_corpus(&[d], &ChunkPolicy::default(), &gw),
            Err(IngestError::Embedding(_))
        ));
    }

    #[test]
    fn empty_corpus_gives_empty_snapshot() {
        let snap = ingest_corpus(&[], &ChunkPolicy::default(), &gateway()).unwrap();
        assert!(snap.chunks().is_empty());
        assert_eq!(snap.dimension(), 8);
    }

    proptest! {
        #[test]
        fn windows_reassemble_unit_text(
            text in "[a-z \n]{1,400}",
            max in 2usize..60,
            overlap_frac in 0.0f64..1.0,
        ) {
            prop_assume!(!text.trim().is_empty());
            let overlap = ((max - 1) as f64 * overlap_frac) as usize;
            let policy = ChunkPolicy::new(max, overlap).unwrap();
            let doc = SourceDocument::new("p", DocKind::Other, vec![unit(1, &text)]);
            let chunks = chunk_document(&doc, &policy).unwrap();
            let mut rebuilt: Vec<char> = Vec::new();
            for (i, chunk) in chunks.iter().enumerate() {
                let chars: Vec<char> = chunk.text.chars().collect();
                prop_assert!(chars.len() <= max);
                let skip = if i == 0 { 0 } else { overlap };
                rebuilt.extend(&chars[skip..]);
            }
            prop_assert_eq!(rebuilt.into_iter().collect::<String>(), text);
        }
    }
}
