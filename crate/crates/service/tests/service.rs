use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use tutor_core::gateway::mock::{EchoChat, FnChat, HashEmbedder};
use tutor_core::gateway::{ChatBackend, ChatRequest, Gateway, GatewayError, RetryPolicy};
use tutor_core::index::IndexSnapshot;
use tutor_core::ingest::{ingest_corpus, ChunkPolicy, DocKind, SourceDocument, Unit};
use tutor_service::{router, ChatService, ServiceConfig, ServiceError, Store, ADMIN_KEY_HEADER};

const DIM: usize = 64;

fn gateway(chat: Arc<dyn ChatBackend>) -> Gateway {
    Gateway::new(chat, Arc::new(HashEmbedder::new(DIM))).with_retry(RetryPolicy::immediate())
}

fn doc(path: &str, text: &str) -> SourceDocument {
    SourceDocument::new(path, DocKind::Slides, vec![Unit { number: 1, text: text.into() }])
}

fn snapshot(docs: &[SourceDocument]) -> IndexSnapshot {
    ingest_corpus(docs, &ChunkPolicy::default(), &gateway(Arc::new(EchoChat))).unwrap()
}

fn base_corpus() -> Vec<SourceDocument> {
    vec![
        doc("slides/week6.pdf", "A Markov random field models dependencies between neighbouring pixels."),
        doc("slides/week3.pdf", "Image matting estimates foreground, background and alpha."),
    ]
}

fn config(db: &std::path::Path) -> ServiceConfig {
    ServiceConfig { database_path: db.to_owned(), max_messages_per_minute: None, ..ServiceConfig::default() }
}

fn service_at(db: &std::path::Path, chat: Arc<dyn ChatBackend>, snap: IndexSnapshot) -> ChatService {
    ChatService::new(config(db), gateway(chat), snap, Store::open(db).unwrap()).unwrap()
}

#[test]
fn schema_holds_no_identifying_columns() {
    let store = Store::open_in_memory().unwrap();
    let forbidden = ["name", "email", "student", "user", "ip", "address", "phone", "token"];
    for (table, column) in store.columns().unwrap() {
        let c = column.to_lowercase();
        let allowed = c == "session_token_hash" || c == "token_hash";
        assert!(
            allowed || !forbidden.iter().any(|f| c == *f || c.starts_with(&format!("{f}_")) || c.ends_with(&format!("_{f}"))),
            "{table}.{column} looks identifying"
        );
    }
}

#[test]
fn raw_token_is_never_stored() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("t.sqlite3");
    let svc = service_at(&db, Arc::new(EchoChat), snapshot(&base_corpus()));
    let token = svc.create_session(true).unwrap().token;
    svc.post_message(&token, "what is a Markov random field").unwrap();
    drop(svc);
    let bytes = std::fs::read(&db).unwrap();
    let haystack = String::from_utf8_lossy(&bytes);
    assert!(!haystack.contains(&token));
}

#[test]
fn turns_survive_restart_and_log_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("t.sqlite3");
    let svc = service_at(&db, Arc::new(EchoChat), snapshot(&base_corpus()));
    let token = svc.create_session(true).unwrap().token;
    let mut prefixes = Vec::new();
    for q in ["what is a Markov random field", "and matting?", "thanks"] {
        svc.post_message(&token, q).unwrap();
        prefixes.push(svc.get_history(&token).unwrap());
    }
    for w in prefixes.windows(2) {
        assert_eq!(w[0][..], w[1][..w[0].len()]);
    }
    drop(svc);

    let svc = service_at(&db, Arc::new(EchoChat), snapshot(&base_corpus()));
    let history = svc.get_history(&token).unwrap();
    assert_eq!(history.iter().map(|t| t.turn_id).collect::<Vec<_>>(), [1, 2, 3]);
    assert_eq!(history[0].query, "what is a Markov random field");
    assert_eq!(svc.query_log().unwrap().len(), 3);
    let next = svc.post_message(&token, "one more").unwrap();
    assert_eq!(next.turn_id, 4);
}

#[test]
fn failed_turn_is_not_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("t.sqlite3");
    let chat = FnChat::new(|_: &ChatRequest| Err(GatewayError::Retriable("down".into())));
    let svc = service_at(&db, Arc::new(chat), snapshot(&base_corpus()));
    let token = svc.create_session(true).unwrap().token;
    assert!(matches!(svc.post_message(&token, "hello"), Err(ServiceError::Internal(_))));
    assert!(svc.get_history(&token).unwrap().is_empty());
    assert!(svc.query_log().unwrap().is_empty());
}

#[test]
fn concurrent_posts_get_dense_turn_ids() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("t.sqlite3");
    let svc = Arc::new(service_at(&db, Arc::new(EchoChat), snapshot(&base_corpus())));
    let token = svc.create_session(true).unwrap().token;
    let other = svc.create_session(true).unwrap().token;
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let svc = svc.clone();
            let token = if i % 4 == 3 { other.clone() } else { token.clone() };
            thread::spawn(move || svc.post_message(&token, &format!("message {i}")).unwrap().turn_id)
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let ids: Vec<u64> = svc.get_history(&token).unwrap().iter().map(|t| t.turn_id).collect();
    assert_eq!(ids, (1..=12).collect::<Vec<_>>());
    let ids: Vec<u64> = svc.get_history(&other).unwrap().iter().map(|t| t.turn_id).collect();
    assert_eq!(ids, (1..=4).collect::<Vec<_>>());
}

#[test]
fn hot_swap_during_a_turn() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("t.sqlite3");
    let (entered_tx, entered_rx) = mpsc::channel::<()>();
    let (release_tx, release_rx) = mpsc::channel::<()>();
    let entered_tx = Mutex::new(entered_tx);
    let release_rx = Mutex::new(release_rx);
    let chat = FnChat::new(move |req: &ChatRequest| {
        if req.last_user_message() == Some("slow question about pixels") {
            entered_tx.lock().unwrap().send(()).unwrap();
            release_rx.lock().unwrap().recv_timeout(Duration::from_secs(10)).unwrap();
        }
        Ok(req.system_message().unwrap_or_default().to_owned())
    });
    let svc = Arc::new(service_at(&db, Arc::new(chat), snapshot(&base_corpus())));
    let token = svc.create_session(true).unwrap().token;

    let worker = {
        let svc = svc.clone();
        let token = token.clone();
        thread::spawn(move || svc.post_message(&token, "slow question about pixels"))
    };
    entered_rx.recv_timeout(Duration::from_secs(10)).unwrap();
    let mut docs = base_corpus();
    docs.push(doc("announcements/exam2.txt", "The second quiz takes place on the nineteenth of March."));
    let old_hash = svc.health().snapshot_hash;
    let new_hash = svc.swap_snapshot(snapshot(&docs)).unwrap();
    assert_ne!(old_hash, new_hash);
    release_tx.send(()).unwrap();

    let in_flight = worker.join().unwrap().unwrap();
    assert!(!in_flight.reply.contains("nineteenth"), "in-flight turn kept the old snapshot");
    let after = svc.post_message(&token, "when is the second quiz? nineteenth").unwrap();
    assert!(after.reply.contains("announcements/exam2.txt"));
    assert_eq!(after.turn_id, 2);
}

#[test]
fn corrupt_snapshot_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("t.sqlite3");
    let svc = service_at(&db, Arc::new(EchoChat), snapshot(&base_corpus()));
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{not json").unwrap();
    let before = svc.health().snapshot_hash;
    assert!(matches!(svc.swap_snapshot_from_path(&path), Err(ServiceError::SnapshotRejected(_))));
    assert_eq!(svc.health().snapshot_hash, before);
}

async fn spawn_http(svc: Arc<ChatService>, admin: Option<String>) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(svc, admin)).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn http_api_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("t.sqlite3");
    let static_dir = dir.path().join("www");
    std::fs::create_dir(&static_dir).unwrap();
    std::fs::write(static_dir.join("index.html"), "<!doctype html><title>tutor</title>").unwrap();
    let cfg = ServiceConfig { static_dir: Some(static_dir), ..config(&db) };
    let svc = Arc::new(
        ChatService::new(cfg, gateway(Arc::new(EchoChat)), snapshot(&base_corpus()), Store::open(&db).unwrap()).unwrap(),
    );
    let base = spawn_http(svc, Some("s3cret".into())).await;
    let http = reqwest::Client::new();

    let r = http.post(format!("{base}/api/session")).json(&json!({"consent": false})).send().await.unwrap();
    assert_eq!(r.status(), 403);
    let body: Value = r.json().await.unwrap();
    assert!(body["consent_text"].as_str().unwrap().contains("information leaflet"));

    let r = http.post(format!("{base}/api/session")).json(&json!({"consent": true})).send().await.unwrap();
    assert_eq!(r.status(), 200);
    let body: Value = r.json().await.unwrap();
    let token = body["token"].as_str().unwrap().to_owned();
    assert_eq!(body["privacy_notice"], "Do not disclose any information which could identify an individual");

    let r = http.post(format!("{base}/api/chat")).json(&json!({"token": token, "message": "what is a Markov random field"})).send().await.unwrap();
    assert_eq!(r.status(), 200);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["turn_id"], 1);
    assert!(body["citations"].is_array());
    assert_eq!(body["degraded"], false);
    assert!(body["privacy_notice"].is_string());

    let r = http.post(format!("{base}/api/chat")).json(&json!({"token": "bogus", "message": "hi"})).send().await.unwrap();
    assert_eq!(r.status(), 401);
    let r = http.post(format!("{base}/api/chat")).json(&json!({"token": token, "message": ""})).send().await.unwrap();
    assert_eq!(r.status(), 400);
    let r = http.post(format!("{base}/api/chat")).json(&json!({"token": token, "message": "x".repeat(4001)})).send().await.unwrap();
    assert_eq!(r.status(), 400);

    let r = http.get(format!("{base}/api/history")).query(&[("token", &token)]).send().await.unwrap();
    assert_eq!(r.status(), 200);
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["turns"].as_array().unwrap().len(), 1);

    let r = http.get(format!("{base}/api/health")).send().await.unwrap();
    let body: Value = r.json().await.unwrap();
    assert_eq!(body["status"], "ok");
    assert!(body["snapshot_hash"].is_string());
    assert!(body["uptime_s"].is_u64());

    let snap_path = dir.path().join("next.json");
    snapshot(&base_corpus()[..1]).save(&snap_path).unwrap();
    let r = http.post(format!("{base}/api/admin/snapshot")).json(&json!({"path": snap_path})).send().await.unwrap();
    assert_eq!(r.status(), 403);
    let r = http
        .post(format!("{base}/api/admin/snapshot"))
        .header(ADMIN_KEY_HEADER, "s3cret")
        .json(&json!({"path": snap_path}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    assert_eq!(r.json::<Value>().await.unwrap()["ok"], true);

    let r = http.get(format!("{base}/index.html")).send().await.unwrap();
    assert_eq!(r.status(), 200);
    assert!(r.text().await.unwrap().contains("tutor"));
}

#[test]
fn example_config_loads() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/tutor.example.toml");
    let config = ServiceConfig::load(&path).unwrap();
    assert_eq!(config.port, 8080);
    assert_eq!(config.gateway.embedding_dim, 256);
    assert_eq!(config.gateway.backend, tutor_core::gateway::BackendKind::MockEcho);
}
