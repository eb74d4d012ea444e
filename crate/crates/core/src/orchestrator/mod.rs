//! The per-query flow: rewrite rules, retrieval, prompt assembly with a
//! windowed history, generation and citation checking.

pub mod citations;
pub mod rewrite;
pub mod template;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::index::{retrieve, IndexSnapshot, OverlapReranker, Reranker, RetrievalConfig};
use crate::telemetry::QueryLogRecord;

pub use citations::{validate_citations, Citation, CitationCheck};
pub use rewrite::{apply_rewrite_rules, Rewrite, RuleSet, SafetyRewriteRule};
pub use template::{assemble_prompt, GenerationSettings, PromptTemplate};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid rewrite rule: {0}")]
    InvalidRule(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("generation failed: {0}")]
    Gateway(#[from] GatewayError),
}

pub const DEFAULT_HISTORY_LIMIT: usize = 10;
pub const FILTERED_APOLOGY: &str = "Sorry, I can't answer that as phrased because it was flagged by the \
content filter. Could you rephrase your question?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub turn_id: u64,
    /// The query exactly as the student typed it.
    pub query: String,
    /// The query after rewrite rules; this is what the model saw.
    #[serde(default)]
    pub sanitized_query: String,
    pub reply: String,
    pub citations: Vec<Citation>,
    pub timestamp: DateTime<Utc>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    #[serde(default)]
    pub degraded: bool,
    #[serde(default)]
    pub filtered: bool,
    #[serde(default)]
    pub violations: u32,
    #[serde(default)]
    pub retrieved_chunk_ids: Vec<String>,
}

impl ConversationTurn {
    pub(crate) fn prompt_query(&self) -> &str {
        if self.sanitized_query.is_empty() {
            &self.query
        } else {
            &self.sanitized_query
        }
    }

    /// Every citation points at a chunk retrieved for this turn.
    pub fn is_grounded(&self) -> bool {
        self.citations
            .iter()
            .all(|c| self.retrieved_chunk_ids.contains(&c.chunk_id))
    }
}

/// The last `min(limit, len)` turns, in order.
pub fn window_history(turns: &[ConversationTurn], limit: usize) -> &[ConversationTurn] {
    &turns[turns.len().saturating_sub(limit)..]
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionState {
    pub token_hash: String,
    pub turns: Vec<ConversationTurn>,
}

impl SessionState {
    pub fn new(token_hash: impl Into<String>) -> Self {
        Self { token_hash: token_hash.into(), turns: Vec::new() }
    }

    pub fn next_turn_id(&self) -> u64 {
        self.turns.last().map_or(1, |t| t.turn_id + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TutorConfig {
    /// Exchanges in the prompt, counting the current question.
    pub history_limit: usize,
    pub retrieval: RetrievalConfig,
    /// Copy raw query text into telemetry records. Off by default.
    pub retain_query_text: bool,
}

impl Default for TutorConfig {
    fn default() -> Self {
        Self { history_limit: DEFAULT_HISTORY_LIMIT, retrieval: RetrievalConfig::default(), retain_query_text: false }
    }
}

#[derive(Debug, Clone)]
pub struct TurnOutcome {
    pub turn: ConversationTurn,
    pub log: QueryLogRecord,
    pub request: ChatRequest,
    pub applied_rules: Vec<usize>,
}

pub struct Tutor {
    template: PromptTemplate,
    rules: RuleSet,
    gateway: Arc<Gateway>,
    reranker: Arc<dyn Reranker>,
    config: TutorConfig,
}

impl Tutor {
    pub fn new(template: PromptTemplate, rules: RuleSet, gateway: Arc<Gateway>, config: TutorConfig) -> Self {
        Self { template, rules, gateway, reranker: Arc::new(OverlapReranker), config }
    }

    pub fn with_reranker(mut self, reranker: Arc<dyn Reranker>) -> Self {
        self.reranker = reranker;
        self
    }

    pub fn config(&self) -> &TutorConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    fn settings(&self) -> GenerationSettings {
        GenerationSettings {
            model_id: self.gateway.model_id().to_owned(),
            temperature: self.gateway.temperature(),
            max_output_tokens: self.gateway.max_output_tokens(),
        }
    }

    /// Runs one exchange and appends it to `session`.
    ///
    /// A content-filter rejection still yields a turn, carrying an apology
    /// and no citations. Any other generation failure returns an error and
    /// leaves `session` unchanged.
    pub fn handle_turn(
        &self,
        session: &mut SessionState,
        query: &str,
        snapshot: &IndexSnapshot,
        now: DateTime<Utc>,
    ) -> Result<TurnOutcome, OrchestratorError> {
        let rewrite = apply_rewrite_rules(query, &self.rules);
        let retrieval = retrieve(snapshot, &rewrite.sanitized, &self.gateway, self.reranker.as_ref(), &self.config.retrieval);
        let history = window_history(&session.turns, self.config.history_limit.saturating_sub(1));
        let request = assemble_prompt(
            &self.template,
            &retrieval.results,
            history,
            &rewrite.sanitized,
            now,
            &self.settings(),
        );
        let (reply, citations, violations, prompt_tokens, completion_tokens, filtered) =
            match self.gateway.chat(&request) {
                Ok(response) => {
                    let check = validate_citations(&response.content, &retrieval.results);
                    if check.violations > 0 {
                        log::warn!("stripped {} ungrounded citation(s)", check.violations);
                    }
                    (check.clean_reply, check.citations, check.violations, response.prompt_tokens, response.completion_tokens, false)
                }
                Err(GatewayError::Filtered { reason }) => {
                    log::warn!("reply filtered: {reason}");
                    (FILTERED_APOLOGY.to_owned(), Vec::new(), 0, 0, 0, true)
                }
                Err(e) => return Err(e.into()),
            };
        let turn = ConversationTurn {
            turn_id: session.next_turn_id(),
            query: query.to_owned(),
            sanitized_query: rewrite.sanitized,
            reply,
            citations,
            timestamp: now,
            prompt_tokens,
            completion_tokens,
            degraded: retrieval.degraded,
            filtered,
            violations,
            retrieved_chunk_ids: retrieval.results.iter().map(|r| r.chunk.chunk_id.clone()).collect(),
        };
        let log = QueryLogRecord {
            timestamp: now,
            session_token_hash: session.token_hash.clone(),
            prompt_tokens,
            completion_tokens,
            degraded: turn.degraded,
            violations,
            query_text: self.config.retain_query_text.then(|| query.to_owned()),
        };
        session.turns.push(turn.clone());
        Ok(TurnOutcome { turn, log, request, applied_rules: rewrite.applied })
    }
}
