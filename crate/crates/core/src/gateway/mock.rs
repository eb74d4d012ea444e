//! Offline backends. All of them are pure functions of their inputs.

use std::collections::BTreeMap;
use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, ChatResponse, Embedder, EmbeddingVector, GatewayError};
use crate::text::{fnv1a64, tokenize, word_count};

/// Word count of the messages rendered one per line as `role: content`.
pub fn prompt_word_count(request: &ChatRequest) -> u64 {
    request
        .messages
        .iter()
        .map(|m| 1 + word_count(&m.content))
        .sum()
}

fn respond(request: &ChatRequest, content: String) -> ChatResponse {
    ChatResponse {
        completion_tokens: word_count(&content),
        prompt_tokens: prompt_word_count(request),
        content,
    }
}

/// Replies with the last user message.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoChat;

impl ChatBackend for EchoChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let last = request.last_user_message().unwrap_or_default().to_owned();
        Ok(respond(request, last))
    }
}

/// Looks the trimmed last user message up in a canned reply table.
#[derive(Debug, Clone)]
pub struct ScriptedChat {
    replies: BTreeMap<String, String>,
    fallback: String,
}

impl ScriptedChat {
    pub const DEFAULT_FALLBACK: &'static str = "I don't have a scripted answer for that.";

    pub fn new(replies: BTreeMap<String, String>) -> Self {
        Self { replies, fallback: Self::DEFAULT_FALLBACK.into() }
    }

    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = fallback.into();
        self
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = request.last_user_message().unwrap_or_default().trim();
        let reply = self.replies.get(key).unwrap_or(&self.fallback).clone();
        Ok(respond(request, reply))
    }
}

/// Backend driven by a closure; handy for tests that need to look at the
/// prompt or inject failures.
pub struct FnChat<F>(F);

impl<F> FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> ChatBackend for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (self.0)(request).map(|content| respond(request, content))
    }
}

/// Wraps a backend and keeps every request it forwarded.
pub struct RecordingChat<B> {
    inner: B,
    requests: Mutex<Vec<ChatRequest>>,
}

impl<B: ChatBackend> RecordingChat<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, requests: Mutex::new(Vec::new()) }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("recording lock").clone()
    }

    pub fn last_request(&self) -> Option<ChatRequest> {
        self.requests.lock().expect("recording lock").last().cloned()
    }
}

impl<B: ChatBackend> ChatBackend for RecordingChat<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.requests.lock().expect("recording lock").push(request.clone());
        self.inner.complete(request)
    }
}

/// Deterministic bag-of-words embedder.
///
/// Each analyzer token adds 1 to bucket `fnv1a64(token) mod D`; the count
/// vector is then scaled to unit Euclidean norm. Text with no analyzer
/// tokens (only punctuation) is hashed as a single token of its trimmed form.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(GatewayError::Precondition("cannot embed empty text".into()));
        }
        let mut tokens = tokenize(trimmed);
        if tokens.is_empty() {
            tokens.push(trimmed.to_owned());
        }
        let mut counts = vec![0.0f64; self.dim];
        for token in &tokens {
            counts[(fnv1a64(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        EmbeddingVector::new(counts.into_iter().map(|c| c / norm).collect())
    }
}

impl Embedder for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn model_id(&self) -> String {
        format!("mock-hash-{}", self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Precondition("no texts to embed".into()));
        }
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// Embedder that always fails with a retriable error.
#[derive(Debug, Clone, Copy)]
pub struct UnavailableEmbedder {
    pub dim: usize,
}

impl Embedder for UnavailableEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn model_id(&self) -> String {
        "unavailable".into()
    }

    fn embed_batch(&self, _texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        Err(GatewayError::Retriable("embedding backend unavailable".into()))
    }
}
