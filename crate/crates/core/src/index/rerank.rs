//! Re-ranking plug-ins.

use std::collections::HashSet;
use std::sync::Arc;

use regex::Regex;
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, Gateway, Role};
use crate::ingest::Chunk;
use crate::text::tokenize;

#[derive(Debug, Error)]
#[error("reranker failed: {0}")]
pub struct RerankError(pub String);

/// Scores each candidate's relevance to the query, nominally in [0, 1].
pub trait Reranker: Send + Sync {
    fn scores(&self, query: &str, candidates: &[&Chunk]) -> Result<Vec<f64>, RerankError>;
}

/// Fraction of distinct query terms that occur in the chunk.
#[derive(Debug, Default, Clone, Copy)]
pub struct OverlapReranker;

impl Reranker for OverlapReranker {
    fn scores(&self, query: &str, candidates: &[&Chunk]) -> Result<Vec<f64>, RerankError> {
        let query_terms: HashSet<String> = tokenize(query).into_iter().collect();
        if query_terms.is_empty() {
            return Ok(vec![0.0; candidates.len()]);
        }
        Ok(candidates
            .iter()
            .map(|chunk| {
                let terms: HashSet<String> = tokenize(&chunk.text).into_iter().collect();
                query_terms.intersection(&terms).count() as f64 / query_terms.len() as f64
            })
            .collect())
    }
}

/// Scores everything zero, leaving the fused order untouched.
#[derive(Debug, Default, Clone, Copy)]
pub struct ZeroReranker;

impl Reranker for ZeroReranker {
    fn scores(&self, _query: &str, candidates: &[&Chunk]) -> Result<Vec<f64>, RerankError> {
        Ok(vec![0.0; candidates.len()])
    }
}

/// Asks the chat model to grade every passage 0-10 in one call.
///
/// The reply is expected to hold lines like `3: 7`; passages without a
/// grade score 0.
pub struct LlmReranker {
    gateway: Arc<Gateway>,
    max_passage_chars: usize,
}

impl LlmReranker {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway, max_passage_chars: 600 }
    }

    fn request(&self, query: &str, candidates: &[&Chunk]) -> ChatRequest {
        let mut passages = String::new();
        for (i, chunk) in candidates.iter().enumerate() {
            let text: String = chunk.text.chars().take(self.max_passage_chars).collect();
            passages.push_str(&format!("[{}] {}\n", i + 1, text.replace('\n', " ")));
        }
        ChatRequest {
            model_id: self.gateway.model_id().to_owned(),
            messages: vec![
                ChatMessage::new(
                    Role::System,
                    "You grade how useful each numbered passage is for answering a student's question. \
                     Reply with one line per passage in the form `<number>: <grade>` where grade is an \
                     integer from 0 (irrelevant) to 10 (directly answers it). Output nothing else.",
                ),
                ChatMessage::new(Role::User, format!("Question: {query}\n\nPassages:\n{passages}")),
            ],
            temperature: 0.0,
            max_output_tokens: (candidates.len() as u32 * 8).max(16),
        }
    }
}

pub(crate) fn parse_grades(reply: &str, n: usize) -> Vec<f64> {
    static LINE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let line = LINE.get_or_init(|| Regex::new(r"(?m)^\s*\[?(\d+)\]?\s*[:=-]\s*(\d+(?:\.\d+)?)").expect("valid regex"));
    let mut grades = vec![0.0; n];
    for caps in line.captures_iter(reply) {
        let (Ok(i), Ok(g)) = (caps[1].parse::<usize>(), caps[2].parse::<f64>()) else { continue };
        if (1..=n).contains(&i) {
            grades[i - 1] = (g / 10.0).clamp(0.0, 1.0);
        }
    }
    grades
}

impl Reranker for LlmReranker {
    fn scores(&self, query: &str, candidates: &[&Chunk]) -> Result<Vec<f64>, RerankError> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let response = self
            .gateway
            .chat(&self.request(query, candidates))
            .map_err(|e| RerankError(e.to_string()))?;
        Ok(parse_grades(&response.content, candidates.len()))
    }
}
