//! Chat-completion and embedding clients.
//!
//! Every backend speaks the same two traits, [`ChatBackend`] and [`Embedder`].
//! [`Gateway`] wraps a pair of them with request validation, the retry
//! policy and token accounting. The live backend talks to any
//! OpenAI-compatible server; the mocks in [`mock`] are deterministic and need
//! no network.

pub mod live;
pub mod mock;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    Precondition(String),
    /// Network failure, timeout, rate limit or server-side error.
    #[error("transient backend failure: {0}")]
    Retriable(String),
    #[error("backend rejected request (HTTP {status}): {message}")]
    Config { status: u16, message: String },
    /// The backend's content filter refused the request or the completion.
    #[error("content filtered: {reason}")]
    Filtered { reason: String },
}

impl GatewayError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, GatewayError::Retriable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// OpenAI-compatible request body for `POST {base}/chat/completions`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireChatRequest {
    model: String,
    messages: Vec<ChatMessage>,
    temperature: f64,
    max_tokens: u32,
}

impl ChatRequest {
    /// Checks the message-shape invariants: a single leading system message,
    /// then user/assistant turns alternating from `user`.
    pub fn validate(&self) -> Result<(), GatewayError> {
        let Some(first) = self.messages.first() else {
            return Err(GatewayError::Precondition("messages must not be empty".into()));
        };
        if first.role != Role::System {
            return Err(GatewayError::Precondition("first message must have role system".into()));
        }
        for (i, msg) in self.messages.iter().enumerate().skip(1) {
            let expected = if i % 2 == 1 { Role::User } else { Role::Assistant };
            if msg.role != expected {
                return Err(GatewayError::Precondition(format!(
                    "message {i} has role {}, expected {}",
                    msg.role.as_str(),
                    expected.as_str()
                )));
            }
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Precondition(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::Precondition("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn to_wire_json(&self) -> String {
        let wire = WireChatRequest {
            model: self.model_id.clone(),
            messages: self.messages.clone(),
            temperature: self.temperature,
            max_tokens: self.max_output_tokens,
        };
        serde_json::to_string(&wire).expect("chat request serializes")
    }

    pub fn from_wire_json(body: &str) -> Result<Self, GatewayError> {
        let wire: WireChatRequest = serde_json::from_str(body)
            .map_err(|e| GatewayError::Precondition(format!("malformed chat body: {e}")))?;
        Ok(Self {
            model_id: wire.model,
            messages: wire.messages,
            temperature: wire.temperature,
            max_output_tokens: wire.max_tokens,
        })
    }

    pub fn system_message(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// A finite real vector of the backend's configured dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GatewayError> {
        if values.is_empty() {
            return Err(GatewayError::Precondition("embedding vector is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::Precondition("embedding has non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, GatewayError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = GatewayError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    /// Identifier recorded in snapshots, e.g. the embedding model name.
    fn model_id(&self) -> String;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_delay: Duration::from_millis(250) }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        Self { max_retries: 2, base_delay: Duration::ZERO }
    }

    /// Runs `op`, retrying retriable failures with doubling delays.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retriable() && attempt < self.max_retries => {
                    let delay = self.base_delay * 2u32.pow(attempt);
                    log::warn!("retrying after transient failure ({e}); attempt {}", attempt + 1);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self { prompt_tokens, completion_tokens }
    }
}

/// Prices per 1000 tokens, in the deployment's accounting currency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

/// Total token cost, rounded to 6 decimal places.
pub fn count_cost(usage: &[TokenUsage], prices: &PriceTable) -> Result<f64, GatewayError> {
    for p in [prices.input_per_1k, prices.output_per_1k] {
        if !p.is_finite() || p < 0.0 {
            return Err(GatewayError::Precondition(format!("price {p} must be finite and >= 0")));
        }
    }
    let (prompt, completion) = usage.iter().fold((0u128, 0u128), |(p, c), u| {
        (p + u128::from(u.prompt_tokens), c + u128::from(u.completion_tokens))
    });
    let total = prompt as f64 / 1000.0 * prices.input_per_1k
        + completion as f64 / 1000.0 * prices.output_per_1k;
    Ok((total * 1e6).round() / 1e6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Live,
    MockEcho,
    MockScripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub backend: BackendKind,
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model_id: String,
    pub embedding_model_id: String,
    pub embedding_dim: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub price_in_per_1k: f64,
    pub price_out_per_1k: f64,
    pub request_timeout_secs: u64,
    /// Canned replies for `mock-scripted`, keyed by the last user message.
    pub scripted_replies: BTreeMap<String, String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Live,
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model_id: "gpt-4o-mini".into(),
            embedding_model_id: "text-embedding-ada-002".into(),
            embedding_dim: 1536,
            temperature: 0.2,
            max_output_tokens: 1024,
            price_in_per_1k: 0.00015,
            price_out_per_1k: 0.0006,
            request_timeout_secs: 60,
            scripted_replies: BTreeMap::new(),
        }
    }
}

impl BackendConfig {
    pub fn mock_echo(embedding_dim: usize) -> Self {
        Self { backend: BackendKind::MockEcho, embedding_dim, ..Self::default() }
    }

    pub fn prices(&self) -> PriceTable {
        PriceTable { input_per_1k: self.price_in_per_1k, output_per_1k: self.price_out_per_1k }
    }
}

/// Validated, retried, usage-accounted access to one chat backend and one embedder.
pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    embedder: Arc<dyn Embedder>,
    retry: RetryPolicy,
    model_id: String,
    temperature: f64,
    max_output_tokens: u32,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn Embedder>) -> Self {
        let defaults = BackendConfig::default();
        Self {
            chat,
            embedder,
            retry: RetryPolicy::default(),
            model_id: defaults.model_id,
            temperature: defaults.temperature,
            max_output_tokens: defaults.max_output_tokens,
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_generation(mut self, model_id: &str, temperature: f64, max_output_tokens: u32) -> Self {
        self.model_id = model_id.to_owned();
        self.temperature = temperature;
        self.max_output_tokens = max_output_tokens;
        self
    }

    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        if config.embedding_dim == 0 {
            return Err(GatewayError::Precondition("embedding_dim must be positive".into()));
        }
        let embedder_mock: Arc<dyn Embedder> = Arc::new(mock::HashEmbedder::new(config.embedding_dim));
        let (chat, embedder): (Arc<dyn ChatBackend>, Arc<dyn Embedder>) = match config.backend {
            BackendKind::Live => {
                let client = Arc::new(live::OpenAiCompatible::from_config(config)?);
                (client.clone(), client)
            }
            BackendKind::MockEcho => (Arc::new(mock::EchoChat), embedder_mock),
            BackendKind::MockScripted => (
                Arc::new(mock::ScriptedChat::new(config.scripted_replies.clone())),
                embedder_mock,
            ),
        };
        Ok(Self::new(chat, embedder).with_generation(
            &config.model_id,
            config.temperature,
            config.max_output_tokens,
        ))
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_output_tokens(&self) -> u32 {
        self.max_output_tokens
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let response = self.retry.run(|| self.chat.complete(request))?;
        self.prompt_tokens.fetch_add(response.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens.fetch_add(response.completion_tokens, Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(response)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        embed_with(self.embedder.as_ref(), texts, self.retry)
    }

    /// Cumulative usage over successful chat calls.
    pub fn usage(&self) -> TokenUsage {
        TokenUsage::new(
            self.prompt_tokens.load(Ordering::Relaxed),
            self.completion_tokens.load(Ordering::Relaxed),
        )
    }

    pub fn chat_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Embeds `texts` with precondition checks, the retry policy and a
/// post-condition check on count and dimension.
pub fn embed_with(
    embedder: &dyn Embedder,
    texts: &[String],
    retry: RetryPolicy,
) -> Result<Vec<EmbeddingVector>, GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::Precondition("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(GatewayError::Precondition(format!("text {i} is empty")));
    }
    let vectors = retry.run(|| embedder.embed_batch(texts))?;
    if vectors.len() != texts.len() {
        return Err(GatewayError::Retriable(format!(
            "embedder returned {} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let dim = embedder.dimension();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(GatewayError::Config {
            status: 0,
            message: format!("embedder returned dimension {}, configured {dim}", v.dim()),
        });
    }
    Ok(vectors)
}
