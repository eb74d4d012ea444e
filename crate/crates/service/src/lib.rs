//! Anonymous-session chat service: consent-gated sessions, per-session turn
//! serialization, SQLite persistence and an HTTP JSON API.

pub mod config;
pub mod http;
pub mod service;
pub mod store;

pub use config::{ServiceConfig, DEFAULT_PRIVACY_NOTICE, MAX_MESSAGE_CHARS};
pub use http::{router, serve, ADMIN_KEY_HEADER};
pub use service::{new_session_token, ChatReply, ChatService, CitationOut, Health, ServiceError, SessionCreated};
pub use store::{Store, StoreError};
