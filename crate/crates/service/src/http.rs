//! JSON API over [`ChatService`], plus an optional static file route for the
//! browser client.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;
use tutor_core::orchestrator::ConversationTurn;

use crate::service::{ChatReply, ChatService, Health, ServiceError, SessionCreated};

pub const ADMIN_KEY_HEADER: &str = "x-admin-key";

#[derive(Clone)]
struct AppState {
    service: Arc<ChatService>,
    admin_key: Option<String>,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

pub fn status_of(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::ConsentRequired(_) | ServiceError::Forbidden => StatusCode::FORBIDDEN,
        ServiceError::UnknownSession => StatusCode::UNAUTHORIZED,
        ServiceError::BadRequest(_) | ServiceError::SnapshotRejected(_) => StatusCode::BAD_REQUEST,
        ServiceError::RateLimited => StatusCode::TOO_MANY_REQUESTS,
        ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_of(&self.0);
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        let body = match &self.0 {
            ServiceError::ConsentRequired(text) => json!({ "error": "consent required", "consent_text": text }),
            ServiceError::Internal(_) => json!({ "error": "internal error; the message was not saved" }),
            other => json!({ "error": other.to_string() }),
        };
        (status, Json(body)).into_response()
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
        .map_err(ApiError)
}

#[derive(Deserialize)]
struct SessionRequest {
    consent: bool,
}

#[derive(Deserialize)]
struct ChatRequestBody {
    token: String,
    message: String,
}

#[derive(Deserialize)]
struct HistoryQuery {
    token: String,
}

#[derive(Serialize)]
struct HistoryBody {
    turns: Vec<ConversationTurn>,
}

#[derive(Deserialize)]
struct SnapshotRequest {
    path: PathBuf,
}

async fn create_session(State(s): State<AppState>, Json(req): Json<SessionRequest>) -> Result<Json<SessionCreated>, ApiError> {
    blocking(move || s.service.create_session(req.consent)).await.map(Json)
}

async fn chat(State(s): State<AppState>, Json(req): Json<ChatRequestBody>) -> Result<Json<ChatReply>, ApiError> {
    blocking(move || s.service.post_message(&req.token, &req.message)).await.map(Json)
}

async fn history(State(s): State<AppState>, Query(q): Query<HistoryQuery>) -> Result<Json<HistoryBody>, ApiError> {
    blocking(move || s.service.get_history(&q.token)).await.map(|turns| Json(HistoryBody { turns }))
}

async fn swap_snapshot(
    State(s): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<SnapshotRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let presented = headers.get(ADMIN_KEY_HEADER).and_then(|v| v.to_str().ok());
    match (&s.admin_key, presented) {
        (Some(expected), Some(got)) if expected == got => {}
        _ => return Err(ServiceError::Forbidden.into()),
    }
    let hash = blocking(move || s.service.swap_snapshot_from_path(&req.path)).await?;
    Ok(Json(json!({ "ok": true, "snapshot_hash": hash })))
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(s.service.health())
}

/// `admin_key` of `None` disables the admin route.
pub fn router(service: Arc<ChatService>, admin_key: Option<String>) -> Router {
    let static_dir = service.config().static_dir.clone();
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/chat", post(chat))
        .route("/api/history", get(history))
        .route("/api/admin/snapshot", post(swap_snapshot))
        .route("/api/health", get(health))
        .with_state(AppState { service, admin_key });
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<ChatService>, addr: SocketAddr) -> std::io::Result<()> {
    let admin_key = service.config().admin_key();
    if admin_key.is_none() {
        log::warn!("{} is not set; snapshot hot-swap endpoint is disabled", service.config().admin_key_env);
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service, admin_key))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
