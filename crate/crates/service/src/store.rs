//! SQLite persistence for sessions, turns and the query log.
//!
//! Sessions are keyed by a hash of their token, never the token itself.

use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use rusqlite::{params, Connection, OpenFlags, OptionalExtension, Row};
use tutor_core::orchestrator::ConversationTurn;
use tutor_core::telemetry::QueryLogRecord;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("database error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("corrupt row: {0}")]
    Corrupt(String),
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS sessions (
    token_hash   TEXT PRIMARY KEY,
    created_at   TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS turns (
    session_token_hash  TEXT NOT NULL REFERENCES sessions(token_hash),
    turn_id             INTEGER NOT NULL,
    query               TEXT NOT NULL,
    sanitized_query     TEXT NOT NULL,
    reply               TEXT NOT NULL,
    citations           TEXT NOT NULL,
    retrieved_chunk_ids TEXT NOT NULL,
    timestamp           TEXT NOT NULL,
    prompt_tokens       INTEGER NOT NULL,
    completion_tokens   INTEGER NOT NULL,
    degraded            INTEGER NOT NULL,
    filtered            INTEGER NOT NULL,
    violations          INTEGER NOT NULL,
    PRIMARY KEY (session_token_hash, turn_id)
);
CREATE TABLE IF NOT EXISTS query_log (
    id                  INTEGER PRIMARY KEY AUTOINCREMENT,
    session_token_hash  TEXT NOT NULL,
    turn_id             INTEGER NOT NULL,
    timestamp           TEXT NOT NULL,
    prompt_tokens       INTEGER NOT NULL,
    completion_tokens   INTEGER NOT NULL,
    degraded            INTEGER NOT NULL,
    violations          INTEGER NOT NULL,
    query_text          TEXT,
    UNIQUE (session_token_hash, turn_id)
);
";

fn ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>, StoreError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| StoreError::Corrupt(format!("timestamp {s:?}: {e}")))
}

fn json_col<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, StoreError> {
    serde_json::from_str(s).map_err(|e| StoreError::Corrupt(e.to_string()))
}

pub struct Store {
    conn: Mutex<Connection>,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Reads the query log of a database file without taking write access.
    pub fn read_query_log_file(path: &Path) -> Result<Vec<QueryLogRecord>, StoreError> {
        let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
        query_log(&conn)
    }

    pub fn insert_session(&self, token_hash: &str, created_at: DateTime<Utc>) -> Result<(), StoreError> {
        self.conn()
            .execute("INSERT INTO sessions (token_hash, created_at) VALUES (?1, ?2)", params![token_hash, ts(created_at)])?;
        Ok(())
    }

    pub fn session_created_at(&self, token_hash: &str) -> Result<Option<DateTime<Utc>>, StoreError> {
        let raw: Option<String> = self
            .conn()
            .query_row("SELECT created_at FROM sessions WHERE token_hash = ?1", [token_hash], |r| r.get(0))
            .optional()?;
        raw.map(|s| parse_ts(&s)).transpose()
    }

    pub fn session_count(&self) -> Result<u64, StoreError> {
        Ok(self.conn().query_row("SELECT COUNT(*) FROM sessions", [], |r| r.get(0))?)
    }

    /// The last `limit` turns of a session, oldest first.
    pub fn recent_turns(&self, token_hash: &str, limit: usize) -> Result<Vec<ConversationTurn>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT * FROM (SELECT turn_id, query, sanitized_query, reply, citations, retrieved_chunk_ids, timestamp,
                    prompt_tokens, completion_tokens, degraded, filtered, violations
             FROM turns WHERE session_token_hash = ?1 ORDER BY turn_id DESC LIMIT ?2) ORDER BY turn_id",
        )?;
        let limit = i64::try_from(limit).unwrap_or(i64::MAX);
        let rows = stmt.query_map(params![token_hash, limit], raw_turn)?;
        rows.map(|r| r.map_err(StoreError::from).and_then(RawTurn::into_turn)).collect()
    }

    pub fn all_turns(&self, token_hash: &str) -> Result<Vec<ConversationTurn>, StoreError> {
        self.recent_turns(token_hash, usize::MAX)
    }

    /// Writes a turn and its log record in one transaction.
    pub fn persist_turn(
        &self,
        token_hash: &str,
        turn: &ConversationTurn,
        log: &QueryLogRecord,
    ) -> Result<(), StoreError> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        tx.execute(
            "INSERT INTO turns (session_token_hash, turn_id, query, sanitized_query, reply, citations,
                retrieved_chunk_ids, timestamp, prompt_tokens, completion_tokens, degraded, filtered, violations)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12, ?13)",
            params![
                token_hash,
                turn.turn_id as i64,
                turn.query,
                turn.sanitized_query,
                turn.reply,
                serde_json::to_string(&turn.citations).expect("citations serialize"),
                serde_json::to_string(&turn.retrieved_chunk_ids).expect("ids serialize"),
                ts(turn.timestamp),
                turn.prompt_tokens as i64,
                turn.completion_tokens as i64,
                turn.degraded,
                turn.filtered,
                turn.violations,
            ],
        )?;
        tx.execute(
            "INSERT INTO query_log (session_token_hash, turn_id, timestamp, prompt_tokens, completion_tokens,
                degraded, violations, query_text)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
            params![
                log.session_token_hash,
                turn.turn_id as i64,
                ts(log.timestamp),
                log.prompt_tokens as i64,
                log.completion_tokens as i64,
                log.degraded,
                log.violations,
                log.query_text,
            ],
        )?;
        tx.commit()?;
        Ok(())
    }

    pub fn query_log(&self) -> Result<Vec<QueryLogRecord>, StoreError> {
        query_log(&self.conn())
    }

    /// `(table, column)` for every column in the schema.
    pub fn columns(&self) -> Result<Vec<(String, String)>, StoreError> {
        let conn = self.conn();
        let mut tables = conn.prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%'")?;
        let names: Vec<String> = tables.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        let mut out = Vec::new();
        for table in names {
            let mut info = conn.prepare(&format!("PRAGMA table_info({table})"))?;
            let cols: Vec<String> = info.query_map([], |r| r.get(1))?.collect::<Result<_, _>>()?;
            out.extend(cols.into_iter().map(|c| (table.clone(), c)));
        }
        Ok(out)
    }
}

fn query_log(conn: &Connection) -> Result<Vec<QueryLogRecord>, StoreError> {
    let mut stmt = conn.prepare(
        "SELECT timestamp, session_token_hash, prompt_tokens, completion_tokens, degraded, violations, query_text
         FROM query_log ORDER BY timestamp, id",
    )?;
    let rows = stmt.query_map([], |r| {
        Ok((
            r.get::<_, String>(0)?,
            r.get::<_, String>(1)?,
            r.get::<_, i64>(2)?,
            r.get::<_, i64>(3)?,
            r.get::<_, bool>(4)?,
            r.get::<_, u32>(5)?,
            r.get::<_, Option<String>>(6)?,
        ))
    })?;
    rows.map(|row| {
        let (t, hash, p, c, degraded, violations, query_text) = row?;
        Ok(QueryLogRecord {
            timestamp: parse_ts(&t)?,
            session_token_hash: hash,
            prompt_tokens: p as u64,
            completion_tokens: c as u64,
            degraded,
            violations,
            query_text,
        })
    })
    .collect()
}

struct RawTurn {
    turn_id: i64,
    query: String,
    sanitized_query: String,
    reply: String,
    citations: String,
    retrieved: String,
    timestamp: String,
    prompt_tokens: i64,
    completion_tokens: i64,
    degraded: bool,
    filtered: bool,
    violations: u32,
}

fn raw_turn(r: &Row<'_>) -> rusqlite::Result<RawTurn> {
    Ok(RawTurn {
        turn_id: r.get(0)?,
        query: r.get(1)?,
        sanitized_query: r.get(2)?,
        reply: r.get(3)?,
        citations: r.get(4)?,
        retrieved: r.get(5)?,
        timestamp: r.get(6)?,
        prompt_tokens: r.get(7)?,
        completion_tokens: r.get(8)?,
        degraded: r.get(9)?,
        filtered: r.get(10)?,
        violations: r.get(11)?,
    })
}

impl RawTurn {
    fn into_turn(self) -> Result<ConversationTurn, StoreError> {
        Ok(ConversationTurn {
            turn_id: self.turn_id as u64,
            query: self.query,
            sanitized_query: self.sanitized_query,
            reply: self.reply,
            citations: json_col(&self.citations)?,
            timestamp: parse_ts(&self.timestamp)?,
            prompt_tokens: self.prompt_tokens as u64,
            completion_tokens: self.completion_tokens as u64,
            degraded: self.degraded,
            filtered: self.filtered,
            violations: self.violations,
            retrieved_chunk_ids: json_col(&self.retrieved)?,
        })
    }
}
