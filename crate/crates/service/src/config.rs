use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tutor_core::gateway::BackendConfig;

pub const DEFAULT_PRIVACY_NOTICE: &str = "Do not disclose any information which could identify an individual";
pub const DEFAULT_CONSENT_TEXT: &str =
    "Please confirm that you have read the participant information leaflet before using the assistant.";
pub const MAX_MESSAGE_CHARS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Environment variable holding the key for `/api/admin/*`. Admin routes
    /// are disabled when it is unset.
    pub admin_key_env: String,
    pub history_limit: usize,
    pub k: usize,
    pub template_path: Option<PathBuf>,
    pub rules_path: Option<PathBuf>,
    pub privacy_notice: String,
    pub consent_text: String,
    pub database_path: PathBuf,
    pub snapshot_path: Option<PathBuf>,
    /// Sessions never expire when unset.
    pub session_ttl_secs: Option<u64>,
    pub max_messages_per_minute: Option<u32>,
    pub static_dir: Option<PathBuf>,
    pub retain_query_text: bool,
    pub gateway: BackendConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            admin_key_env: "TUTOR_ADMIN_KEY".into(),
            history_limit: tutor_core::orchestrator::DEFAULT_HISTORY_LIMIT,
            k: tutor_core::index::DEFAULT_TOP_K,
            template_path: None,
            rules_path: None,
            privacy_notice: DEFAULT_PRIVACY_NOTICE.into(),
            consent_text: DEFAULT_CONSENT_TEXT.into(),
            database_path: PathBuf::from("tutor.sqlite3"),
            snapshot_path: None,
            session_ttl_secs: None,
            max_messages_per_minute: Some(30),
            static_dir: None,
            retain_query_text: false,
            gateway: BackendConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let config = Self::from_toml(&text)
            .map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.history_limit == 0 {
            return Err(ConfigError::Invalid("history_limit must be at least 1".into()));
        }
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        if self.max_messages_per_minute == Some(0) {
            return Err(ConfigError::Invalid("max_messages_per_minute must be positive when set".into()));
        }
        Ok(())
    }

    pub fn admin_key(&self) -> Option<String> {
        std::env::var(&self.admin_key_env).ok().filter(|k| !k.is_empty())
    }
}
