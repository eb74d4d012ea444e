use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::Utc;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use tutor_core::gateway::Gateway;
use tutor_core::index::{IndexSnapshot, RetrievalConfig};
use tutor_core::orchestrator::{ConversationTurn, PromptTemplate, RuleSet, SessionState, Tutor, TutorConfig};
use tutor_core::telemetry::{hash_session_token, QueryLogRecord};

use crate::config::{ServiceConfig, MAX_MESSAGE_CHARS};
use crate::store::{Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    ConsentRequired(String),
    #[error("unknown or expired session")]
    UnknownSession,
    #[error("{0}")]
    BadRequest(String),
    #[error("too many messages; try again in a minute")]
    RateLimited,
    #[error("admin key missing or wrong")]
    Forbidden,
    #[error("snapshot rejected: {0}")]
    SnapshotRejected(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub token: String,
    pub privacy_notice: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationOut {
    pub source_path: String,
    pub unit_number: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub turn_id: u64,
    pub reply: String,
    pub citations: Vec<CitationOut>,
    pub degraded: bool,
    pub privacy_notice: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub snapshot_hash: String,
    pub chunks: usize,
    pub uptime_s: u64,
}

/// 128 random bits, URL-safe base64 without padding (22 characters).
pub fn new_session_token() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

pub struct ChatService {
    config: ServiceConfig,
    tutor: Tutor,
    store: Store,
    snapshot: RwLock<Arc<IndexSnapshot>>,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    recent_posts: Mutex<HashMap<String, VecDeque<Instant>>>,
    started: Instant,
}

impl ChatService {
    pub fn new(
        config: ServiceConfig,
        gateway: Gateway,
        snapshot: IndexSnapshot,
        store: Store,
    ) -> Result<Self, ServiceError> {
        config.validate().map_err(|e| ServiceError::Internal(e.to_string()))?;
        let template = match &config.template_path {
            Some(p) => PromptTemplate::load(p).map_err(|e| ServiceError::Internal(e.to_string()))?,
            None => PromptTemplate::default_template(),
        };
        let rules = match &config.rules_path {
            Some(p) => RuleSet::load(p).map_err(|e| ServiceError::Internal(e.to_string()))?,
            None => RuleSet::default_rules(),
        };
        let dim = gateway.embedder().dimension();
        if snapshot.dimension() != dim {
            return Err(ServiceError::SnapshotRejected(format!(
                "snapshot dimension {} does not match embedder dimension {dim}",
                snapshot.dimension()
            )));
        }
        let tutor_config = TutorConfig {
            history_limit: config.history_limit,
            retrieval: RetrievalConfig { k: config.k, ..RetrievalConfig::default() },
            retain_query_text: config.retain_query_text,
        };
        let tutor = Tutor::new(template, rules, Arc::new(gateway), tutor_config);
        Ok(Self {
            config,
            tutor,
            store,
            snapshot: RwLock::new(Arc::new(snapshot)),
            session_locks: Mutex::new(HashMap::new()),
            recent_posts: Mutex::new(HashMap::new()),
            started: Instant::now(),
        })
    }

    /// Builds the gateway from `config.gateway` and opens `config.database_path`.
    pub fn from_config(config: ServiceConfig, snapshot: IndexSnapshot) -> Result<Self, ServiceError> {
        let gateway = Gateway::from_config(&config.gateway).map_err(|e| ServiceError::Internal(e.to_string()))?;
        let store = Store::open(&config.database_path)?;
        Self::new(config, gateway, snapshot, store)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn tutor(&self) -> &Tutor {
        &self.tutor
    }

    pub fn current_snapshot(&self) -> Arc<IndexSnapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn create_session(&self, consent: bool) -> Result<SessionCreated, ServiceError> {
        if !consent {
            return Err(ServiceError::ConsentRequired(self.config.consent_text.clone()));
        }
        let token = new_session_token();
        self.store.insert_session(&hash_session_token(&token), Utc::now())?;
        Ok(SessionCreated { token, privacy_notice: self.config.privacy_notice.clone() })
    }

    fn check_session(&self, token_hash: &str) -> Result<(), ServiceError> {
        let created = self.store.session_created_at(token_hash)?.ok_or(ServiceError::UnknownSession)?;
        if let Some(ttl) = self.config.session_ttl_secs {
            let age = Utc::now().signed_duration_since(created);
            if age.num_seconds() >= 0 && age.num_seconds() as u64 >= ttl {
                return Err(ServiceError::UnknownSession);
            }
        }
        Ok(())
    }

    fn session_lock(&self, token_hash: &str) -> Arc<Mutex<()>> {
        self.session_locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(token_hash.to_owned())
            .or_default()
            .clone()
    }

    fn check_rate(&self, token_hash: &str) -> Result<(), ServiceError> {
        let Some(cap) = self.config.max_messages_per_minute else {
            return Ok(());
        };
        let now = Instant::now();
        let mut posts = self.recent_posts.lock().unwrap_or_else(|e| e.into_inner());
        let window = posts.entry(token_hash.to_owned()).or_default();
        while window.front().is_some_and(|t| now.duration_since(*t) >= Duration::from_secs(60)) {
            window.pop_front();
        }
        if window.len() >= cap as usize {
            return Err(ServiceError::RateLimited);
        }
        window.push_back(now);
        Ok(())
    }

    /// Runs one turn and persists it before returning. Turns of one session
    /// are serialized; the snapshot is fixed when the turn starts.
    pub fn post_message(&self, token: &str, text: &str) -> Result<ChatReply, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("message is empty".into()));
        }
        let chars = text.chars().count();
        if chars > MAX_MESSAGE_CHARS {
            return Err(ServiceError::BadRequest(format!(
                "message has {chars} characters; the limit is {MAX_MESSAGE_CHARS}"
            )));
        }
        let token_hash = hash_session_token(token);
        self.check_session(&token_hash)?;
        let lock = self.session_lock(&token_hash);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.check_rate(&token_hash)?;

        let history = self.store.recent_turns(&token_hash, self.config.history_limit)?;
        let mut session = SessionState { token_hash: token_hash.clone(), turns: history };
        let snapshot = self.current_snapshot();
        let outcome = self
            .tutor
            .handle_turn(&mut session, text, &snapshot, Utc::now())
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        self.store.persist_turn(&token_hash, &outcome.turn, &outcome.log)?;
        let turn = outcome.turn;
        Ok(ChatReply {
            turn_id: turn.turn_id,
            citations: turn
                .citations
                .iter()
                .map(|c| CitationOut { source_path: c.source_path.clone(), unit_number: c.unit_number })
                .collect(),
            reply: turn.reply,
            degraded: turn.degraded,
            privacy_notice: self.config.privacy_notice.clone(),
        })
    }

    pub fn get_history(&self, token: &str) -> Result<Vec<ConversationTurn>, ServiceError> {
        let token_hash = hash_session_token(token);
        self.check_session(&token_hash)?;
        Ok(self.store.all_turns(&token_hash)?)
    }

    /// Replaces the live snapshot. Turns already running keep the old one.
    pub fn swap_snapshot(&self, snapshot: IndexSnapshot) -> Result<String, ServiceError> {
        let dim = self.tutor.gateway().embedder().dimension();
        if snapshot.dimension() != dim {
            return Err(ServiceError::SnapshotRejected(format!(
                "snapshot dimension {} does not match embedder dimension {dim}",
                snapshot.dimension()
            )));
        }
        let hash = snapshot.content_hash().to_owned();
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snapshot);
        log::info!("snapshot swapped; content hash {hash}");
        Ok(hash)
    }

    pub fn swap_snapshot_from_path(&self, path: &Path) -> Result<String, ServiceError> {
        let snapshot = IndexSnapshot::load(path).map_err(|e| ServiceError::SnapshotRejected(e.to_string()))?;
        self.swap_snapshot(snapshot)
    }

    pub fn health(&self) -> Health {
        let snap = self.current_snapshot();
        Health {
            status: "ok".into(),
            snapshot_hash: snap.content_hash().to_owned(),
            chunks: snap.chunks().len(),
            uptime_s: self.started.elapsed().as_secs(),
        }
    }

    pub fn query_log(&self) -> Result<Vec<QueryLogRecord>, ServiceError> {
        Ok(self.store.query_log()?)
    }
}
