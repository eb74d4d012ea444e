//! Blocking client for OpenAI-compatible `chat/completions` and `embeddings`.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{BackendConfig, ChatBackend, ChatRequest, ChatResponse, Embedder, EmbeddingVector, GatewayError};

pub struct OpenAiCompatible {
    base_url: String,
    api_key: Option<String>,
    embedding_model: String,
    embedding_dim: usize,
    client: Client,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: AssistantMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct AssistantMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct EmbeddingBody {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
    #[serde(default)]
    index: usize,
}

impl OpenAiCompatible {
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        embedding_model: &str,
        embedding_dim: usize,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(timeout)
            .connect_timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| GatewayError::Config { status: 0, message: format!("http client: {e}") })?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_key,
            embedding_model: embedding_model.to_owned(),
            embedding_dim,
            client,
        })
    }

    /// Reads the API key from the environment variable named in the config.
    /// A missing key is allowed; local servers often need none.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without an API key", config.api_key_env);
        }
        Self::new(
            &config.base_url,
            api_key,
            &config.embedding_model_id,
            config.embedding_dim,
            Duration::from_secs(config.request_timeout_secs.max(1)),
        )
    }

    fn post(&self, path: &str, body: String) -> Result<String, GatewayError> {
        let mut req = self
            .client
            .post(format!("{}/{path}", self.base_url))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req.send().map_err(|e| GatewayError::Retriable(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| GatewayError::Retriable(e.to_string()))?;
        if status.is_success() {
            return Ok(text);
        }
        Err(classify_failure(status, &text))
    }
}

fn classify_failure(status: StatusCode, body: &str) -> GatewayError {
    let parsed: Option<serde_json::Value> = serde_json::from_str(body).ok();
    let error = parsed.as_ref().and_then(|v| v.get("error"));
    let code = error.and_then(|e| e.get("code")).and_then(|c| c.as_str()).unwrap_or_default();
    let message = error
        .and_then(|e| e.get("message"))
        .and_then(|m| m.as_str())
        .unwrap_or(body)
        .to_owned();
    if code == "content_filter" || code == "content_policy_violation" {
        return GatewayError::Filtered { reason: message };
    }
    if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
        return GatewayError::Retriable(format!("HTTP {}: {message}", status.as_u16()));
    }
    GatewayError::Config { status: status.as_u16(), message }
}

impl ChatBackend for OpenAiCompatible {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let text = self.post("chat/completions", request.to_wire_json())?;
        let body: CompletionBody = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Retriable(format!("unparseable completion: {e}")))?;
        let choice = body
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Retriable("completion has no choices".into()))?;
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(GatewayError::Filtered { reason: "completion stopped by content filter".into() });
        }
        let usage = body.usage.unwrap_or_default();
        Ok(ChatResponse {
            content: choice.message.content.unwrap_or_default(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

impl Embedder for OpenAiCompatible {
    fn dimension(&self) -> usize {
        self.embedding_dim
    }

    fn model_id(&self) -> String {
        self.embedding_model.clone()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let body = json!({ "model": self.embedding_model, "input": texts }).to_string();
        let text = self.post("embeddings", body)?;
        let mut parsed: EmbeddingBody = serde_json::from_str(&text)
            .map_err(|e| GatewayError::Retriable(format!("unparseable embeddings: {e}")))?;
        parsed.data.sort_by_key(|item| item.index);
        parsed
            .data
            .into_iter()
            .map(|item| EmbeddingVector::new(item.embedding))
            .collect()
    }
}
