//! Keyword (BM25) and vector (cosine) search, reciprocal-rank fusion,
//! re-ranking, and the composed `retrieve` pipeline.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use super::rerank::Reranker;
use super::{IndexError, IndexSnapshot};
use crate::gateway::{EmbeddingVector, Gateway};
use crate::ingest::Chunk;
use crate::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_RRF_K: u32 = 60;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_RERANK_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredChunk {
    pub chunk_id: String,
    /// Position in the snapshot's chunk list.
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedScore {
    /// 1-based rank in the source list.
    pub rank: usize,
    pub score: f64,
}

/// A chunk moving through fusion and re-ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub chunk_id: String,
    pub index: usize,
    pub keyword: Option<RankedScore>,
    pub vector: Option<RankedScore>,
    pub rrf_score: f64,
    pub rerank_score: f64,
    /// Ordering key: `rrf_score + weight * rerank_score`.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub chunk: Chunk,
    pub keyword_score: f64,
    pub vector_score: f64,
    pub rrf_score: f64,
    pub rerank_score: f64,
    /// Final score after fusion and re-ranking; non-increasing in rank.
    pub fused_score: f64,
    pub final_rank: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Retrieval {
    pub results: Vec<RetrievalResult>,
    /// The query could not be embedded; results are keyword-only.
    pub degraded: bool,
    pub keyword: Vec<ScoredChunk>,
    pub vector: Vec<ScoredChunk>,
    pub fused: Vec<Candidate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalConfig {
    pub k: usize,
    /// Each search stage returns `pool_factor * k` candidates.
    pub pool_factor: usize,
    pub rrf_k: u32,
    pub rerank_weight: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { k: DEFAULT_TOP_K, pool_factor: 2, rrf_k: DEFAULT_RRF_K, rerank_weight: DEFAULT_RERANK_WEIGHT }
    }
}

fn by_score_then_id(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

fn sort_and_truncate(mut hits: Vec<ScoredChunk>, k: usize) -> Vec<ScoredChunk> {
    hits.sort_by(|a, b| by_score_then_id(a.score, &a.chunk_id, b.score, &b.chunk_id));
    hits.truncate(k);
    hits
}

/// Okapi BM25 with `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`, summed over
/// the distinct query terms. Only chunks with a positive score are returned.
pub fn keyword_search(snapshot: &IndexSnapshot, query: &str, k: usize) -> Vec<ScoredChunk> {
    let n = snapshot.chunks().len() as f64;
    let avgdl = snapshot.avg_doc_length();
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut scores: HashMap<usize, f64> = HashMap::new();
    for term in &terms {
        let postings = snapshot.postings(term);
        if postings.is_empty() {
            continue;
        }
        let df = postings.len() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        for posting in postings {
            let tf = f64::from(posting.term_frequency);
            let dl = f64::from(snapshot.doc_length(posting.chunk));
            let norm = 1.0 - BM25_B + BM25_B * dl / avgdl;
            *scores.entry(posting.chunk).or_default() += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * norm);
        }
    }
    let hits = scores
        .into_iter()
        .filter(|&(_, s)| s > 0.0)
        .map(|(index, score)| ScoredChunk { chunk_id: snapshot.chunk(index).chunk_id.clone(), index, score })
        .collect();
    sort_and_truncate(hits, k)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Exact top-k by cosine similarity.
pub fn vector_search(
    snapshot: &IndexSnapshot,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<ScoredChunk>, IndexError> {
    if query.dim() != snapshot.dimension() {
        return Err(IndexError::DimensionMismatch { expected: snapshot.dimension(), got: query.dim() });
    }
    let hits = (0..snapshot.chunks().len())
        .map(|index| ScoredChunk {
            chunk_id: snapshot.chunk(index).chunk_id.clone(),
            index,
            score: cosine(query.values(), snapshot.vector(index).values()),
        })
        .collect();
    Ok(sort_and_truncate(hits, k))
}

/// Reciprocal-rank fusion: each list contributes `1 / (rrf_k + rank)`.
pub fn fuse_rrf(keyword: &[ScoredChunk], vector: &[ScoredChunk], rrf_k: u32) -> Vec<Candidate> {
    let mut fused: Vec<Candidate> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for (list, is_keyword) in [(keyword, true), (vector, false)] {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for (pos, hit) in list.iter().enumerate() {
            if !seen.insert(hit.chunk_id.as_str()) {
                continue;
            }
            let rank = pos + 1;
            let i = *slot.entry(hit.chunk_id.as_str()).or_insert_with(|| {
                fused.push(Candidate {
                    chunk_id: hit.chunk_id.clone(),
                    index: hit.index,
                    keyword: None,
                    vector: None,
                    rrf_score: 0.0,
                    rerank_score: 0.0,
                    score: 0.0,
                });
                fused.len() - 1
            });
            let entry = &mut fused[i];
            let ranked = Some(RankedScore { rank, score: hit.score });
            if is_keyword {
                entry.keyword = ranked;
            } else {
                entry.vector = ranked;
            }
            entry.rrf_score += 1.0 / (f64::from(rrf_k) + rank as f64);
            entry.score = entry.rrf_score;
        }
    }
    fused.sort_by(|a, b| by_score_then_id(a.score, &a.chunk_id, b.score, &b.chunk_id));
    fused
}

/// Adds `weight * reranker score` (clamped to [0, 1]) to each candidate and
/// stably re-sorts. A failing reranker leaves the fused order as it was.
pub fn rerank(
    fused: Vec<Candidate>,
    query: &str,
    snapshot: &IndexSnapshot,
    reranker: &dyn Reranker,
    weight: f64,
) -> Vec<Candidate> {
    if fused.is_empty() {
        return fused;
    }
    let chunks: Vec<&Chunk> = fused.iter().map(|c| snapshot.chunk(c.index)).collect();
    let scores = match reranker.scores(query, &chunks) {
        Ok(s) if s.len() == fused.len() && s.iter().all(|x| x.is_finite()) => s,
        Ok(s) => {
            log::warn!("reranker returned {} scores for {} candidates; keeping fused order", s.len(), fused.len());
            return fused;
        }
        Err(e) => {
            log::warn!("reranker failed ({e}); keeping fused order");
            return fused;
        }
    };
    let mut out: Vec<Candidate> = fused
        .into_iter()
        .zip(scores)
        .map(|(mut c, s)| {
            c.rerank_score = s.clamp(0.0, 1.0);
            c.score = c.rrf_score + weight * c.rerank_score;
            c
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

/// embed → keyword + vector search (pool of `pool_factor * k` each) → RRF →
/// rerank → top k. If the query cannot be embedded the vector stage is
/// skipped and the result is flagged degraded.
pub fn retrieve(
    snapshot: &IndexSnapshot,
    query: &str,
    gateway: &Gateway,
    reranker: &dyn Reranker,
    config: &RetrievalConfig,
) -> Retrieval {
    let pool = config.k.saturating_mul(config.pool_factor.max(1));
    let mut retrieval = Retrieval { results: Vec::new(), degraded: false, keyword: Vec::new(), vector: Vec::new(), fused: Vec::new() };
    if query.trim().is_empty() || config.k == 0 {
        return retrieval;
    }
    retrieval.keyword = keyword_search(snapshot, query, pool);
    let embedded = gateway
        .embed(&[query.to_owned()])
        .map_err(|e| e.to_string())
        .and_then(|mut v| v.pop().ok_or_else(|| "no vector returned".to_owned()))
        .and_then(|v| vector_search(snapshot, &v, pool).map_err(|e| e.to_string()));
    match embedded {
        Ok(hits) => retrieval.vector = hits,
        Err(e) => {
            log::warn!("query embedding failed ({e}); falling back to keyword-only retrieval");
            retrieval.degraded = true;
        }
    }
    retrieval.fused = fuse_rrf(&retrieval.keyword, &retrieval.vector, config.rrf_k);
    let reranked = rerank(retrieval.fused.clone(), query, snapshot, reranker, config.rerank_weight);
    retrieval.results = reranked
        .into_iter()
        .take(config.k)
        .enumerate()
        .map(|(i, c)| {
            let mut chunk = snapshot.chunk(c.index).clone();
            chunk.embedding = None;
            RetrievalResult {
                chunk,
                keyword_score: c.keyword.map_or(0.0, |r| r.score),
                vector_score: c.vector.map_or(0.0, |r| r.score),
                rrf_score: c.rrf_score,
                rerank_score: c.rerank_score,
                fused_score: c.score,
                final_rank: i + 1,
            }
        })
        .collect();
    retrieval
}
