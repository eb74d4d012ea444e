//! Anonymous query telemetry and the usage statistics computed from it.
//!
//! A [`QueryLogRecord`] holds only a timestamp, a one-way hash of the session
//! token and counters. Query text is absent unless retention is explicitly
//! enabled in the service config.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{count_cost, PriceTable, TokenUsage};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("data integrity: {0}")]
    Integrity(String),
    #[error("share undefined: total is zero")]
    UndefinedShare,
    #[error("no queries in log")]
    NoQueries,
    #[error("cohort size must be positive")]
    InvalidCohort,
    #[error("invalid cost input: {0}")]
    InvalidCost(String),
    #[error("log line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLogRecord {
    pub timestamp: DateTime<Utc>,
    pub session_token_hash: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub degraded: bool,
    pub violations: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
}

impl QueryLogRecord {
    pub fn usage(&self) -> TokenUsage {
        TokenUsage::new(self.prompt_tokens, self.completion_tokens)
    }
}

/// SHA-256 of the session token, hex encoded.
pub fn hash_session_token(token: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"session:");
    hasher.update(token.as_bytes());
    hex::encode(hasher.finalize())
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<QueryLogRecord>, TelemetryError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line)
                .map_err(|e| TelemetryError::Parse { line: i + 1, message: e.to_string() })?,
        );
    }
    Ok(records)
}

pub fn write_jsonl(mut writer: impl Write, records: &[QueryLogRecord]) -> Result<(), TelemetryError> {
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn local_date(ts: DateTime<Utc>, offset_minutes: i32) -> NaiveDate {
    (ts + Duration::minutes(i64::from(offset_minutes))).date_naive()
}

/// Query counts per local calendar date, including zero days inside the
/// observed span.
pub fn daily_counts(log: &[QueryLogRecord], offset_minutes: i32) -> Vec<(NaiveDate, u64)> {
    let mut counts: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    for record in log {
        *counts.entry(local_date(record.timestamp, offset_minutes)).or_default() += 1;
    }
    let (Some(&first), Some(&last)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Vec::new();
    };
    first
        .iter_days()
        .take_while(|d| *d <= last)
        .map(|d| (d, counts.get(&d).copied().unwrap_or(0)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UsageSummary {
    pub total_queries: u64,
    pub total_sessions: u64,
    pub queries_per_session: f64,
    pub queries_per_student: f64,
    /// Calendar days from first to last query inclusive (UTC).
    pub span_days: i64,
}

pub fn round_to(value: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (value * scale).round() / scale
}

impl fmt::Display for UsageSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22}{:>10}", "queries", self.total_queries)?;
        writeln!(f, "{:<22}{:>10}", "sessions", self.total_sessions)?;
        writeln!(f, "{:<22}{:>10.1}", "queries/session", self.queries_per_session)?;
        writeln!(f, "{:<22}{:>10.1}", "queries/student", self.queries_per_student)?;
        write!(f, "{:<22}{:>10}", "span (days)", self.span_days)
    }
}

pub fn usage_summary(log: &[QueryLogRecord], cohort_size: u32) -> Result<UsageSummary, TelemetryError> {
    if cohort_size == 0 {
        return Err(TelemetryError::InvalidCohort);
    }
    let total_queries = log.len() as u64;
    let sessions: HashSet<&str> = log
        .iter()
        .map(|r| r.session_token_hash.as_str())
        .filter(|h| !h.is_empty())
        .collect();
    let total_sessions = sessions.len() as u64;
    if total_sessions == 0 && total_queries > 0 {
        return Err(TelemetryError::Integrity(format!("{total_queries} queries carry no session hash")));
    }
    let span_days = match (log.iter().map(|r| r.timestamp).min(), log.iter().map(|r| r.timestamp).max()) {
        (Some(first), Some(last)) => (last.date_naive() - first.date_naive()).num_days() + 1,
        _ => 0,
    };
    Ok(UsageSummary {
        total_queries,
        total_sessions,
        queries_per_session: if total_sessions > 0 { total_queries as f64 / total_sessions as f64 } else { 0.0 },
        queries_per_student: total_queries as f64 / f64::from(cohort_size),
        span_days,
    })
}

pub fn share(part: u64, whole: u64) -> Result<f64, TelemetryError> {
    if whole == 0 {
        return Err(TelemetryError::UndefinedShare);
    }
    Ok(part as f64 / whole as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakShare {
    pub date: NaiveDate,
    pub day_queries: u64,
    pub total_queries: u64,
    pub share: f64,
}

pub fn peak_share(log: &[QueryLogRecord], date: NaiveDate, offset_minutes: i32) -> Result<PeakShare, TelemetryError> {
    let total_queries = log.len() as u64;
    let day_queries = log
        .iter()
        .filter(|r| local_date(r.timestamp, offset_minutes) == date)
        .count() as u64;
    Ok(PeakShare { date, day_queries, total_queries, share: share(day_queries, total_queries)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SessionShare {
    pub date: NaiveDate,
    pub sessions: u64,
    pub session_queries: u64,
    pub day_queries: u64,
    pub share: f64,
}

/// Share of one date's queries that came from its `n` busiest sessions.
pub fn top_sessions_share(
    log: &[QueryLogRecord],
    date: NaiveDate,
    offset_minutes: i32,
    n: usize,
) -> Result<SessionShare, TelemetryError> {
    let mut per_session: BTreeMap<&str, u64> = BTreeMap::new();
    for r in log.iter().filter(|r| local_date(r.timestamp, offset_minutes) == date) {
        *per_session.entry(r.session_token_hash.as_str()).or_default() += 1;
    }
    let day_queries = per_session.values().sum();
    let mut counts: Vec<u64> = per_session.into_values().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    counts.truncate(n);
    let session_queries = counts.iter().sum();
    Ok(SessionShare {
        date,
        sessions: counts.len() as u64,
        session_queries,
        day_queries,
        share: share(session_queries, day_queries)?,
    })
}

/// The busiest local date, earliest on ties.
pub fn peak_day(log: &[QueryLogRecord], offset_minutes: i32) -> Option<(NaiveDate, u64)> {
    daily_counts(log, offset_minutes)
        .into_iter()
        .fold(None, |best, (d, n)| match best {
            Some((_, m)) if m >= n => best,
            _ => Some((d, n)),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub queries: u64,
    pub fixed_cost: f64,
    pub token_cost: f64,
    pub total_cost: f64,
    pub per_query_cost: f64,
    pub token_per_query_cost: f64,
}

impl CostReport {
    pub fn from_totals(fixed_cost: f64, token_cost: f64, queries: u64) -> Result<Self, TelemetryError> {
        if queries == 0 {
            return Err(TelemetryError::NoQueries);
        }
        for c in [fixed_cost, token_cost] {
            if !c.is_finite() || c < 0.0 {
                return Err(TelemetryError::InvalidCost(format!("{c} must be finite and >= 0")));
            }
        }
        let total_cost = fixed_cost + token_cost;
        Ok(Self {
            queries,
            fixed_cost,
            token_cost,
            total_cost,
            per_query_cost: total_cost / queries as f64,
            token_per_query_cost: token_cost / queries as f64,
        })
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22}{:>12}", "queries", self.queries)?;
        writeln!(f, "{:<22}{:>12.2}", "fixed cost", self.fixed_cost)?;
        writeln!(f, "{:<22}{:>12.2}", "token cost", self.token_cost)?;
        writeln!(f, "{:<22}{:>12.2}", "total cost", self.total_cost)?;
        writeln!(f, "{:<22}{:>12.3}", "cost/query", self.per_query_cost)?;
        write!(f, "{:<22}{:>12.4}", "token cost/query", self.token_per_query_cost)
    }
}

pub fn cost_report(log: &[QueryLogRecord], fixed_cost: f64, prices: &PriceTable) -> Result<CostReport, TelemetryError> {
    let usage: Vec<TokenUsage> = log.iter().map(QueryLogRecord::usage).collect();
    let token_cost = count_cost(&usage, prices).map_err(|e| TelemetryError::InvalidCost(e.to_string()))?;
    CostReport::from_totals(fixed_cost, token_cost, log.len() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn record(ts: DateTime<Utc>, session: &str) -> QueryLogRecord {
        QueryLogRecord {
            timestamp: ts,
            session_token_hash: hash_session_token(session),
            prompt_tokens: 100,
            completion_tokens: 50,
            degraded: false,
            violations: 0,
            query_text: None,
        }
    }

    fn at(d: u32, h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 3, d, h, m, 0).unwrap()
    }

    #[test]
    fn daily_counts_examples() {
        let log = vec![record(at(18, 9, 0), "a"), record(at(18, 10, 0), "a"), record(at(18, 11, 0), "b"), record(at(19, 9, 0), "b")];
        let d = |day| NaiveDate::from_ymd_opt(2025, 3, day).unwrap();
        assert_eq!(daily_counts(&log, 0), [(d(18), 3), (d(19), 1)]);
        assert!(daily_counts(&[], 0).is_empty());
        assert_eq!(daily_counts(&[record(at(18, 23, 30), "a")], 120), [(d(19), 1)]);
        let gap = vec![record(at(10, 9, 0), "a"), record(at(12, 9, 0), "a")];
        assert_eq!(daily_counts(&gap, 0), [(d(10), 1), (d(11), 0), (d(12), 1)]);
    }

    #[test]
    fn usage_summary_edge_cases() {
        let empty = usage_summary(&[], 43).unwrap();
        assert_eq!((empty.total_queries, empty.total_sessions, empty.span_days), (0, 0, 0));
        assert_eq!(empty.queries_per_session, 0.0);
        assert!(usage_summary(&[], 0).is_err());
        let mut orphan = record(at(1, 0, 0), "x");
        orphan.session_token_hash.clear();
        assert!(matches!(usage_summary(&[orphan], 5), Err(TelemetryError::Integrity(_))));
    }

    #[test]
    fn shares() {
        assert!((share(564, 724).unwrap() - 0.779).abs() < 5e-4);
        assert!(matches!(share(1, 0), Err(TelemetryError::UndefinedShare)));
        let log = vec![record(at(18, 9, 0), "a")];
        let absent = peak_share(&log, NaiveDate::from_ymd_opt(2025, 1, 1).unwrap(), 0).unwrap();
        assert_eq!(absent.share, 0.0);
        assert!(peak_share(&[], NaiveDate::from_ymd_opt(2025, 1, 1).unwrap(), 0).is_err());
    }

    #[test]
    fn busiest_sessions_share() {
        let mut log: Vec<_> = (0..3).map(|i| record(at(19, 9, i), "a")).collect();
        log.extend((0..2).map(|i| record(at(19, 10, i), "b")));
        log.push(record(at(19, 11, 0), "c"));
        log.push(record(at(20, 11, 0), "a"));
        let day = NaiveDate::from_ymd_opt(2025, 3, 19).unwrap();
        let s = top_sessions_share(&log, day, 0, 2).unwrap();
        assert_eq!((s.sessions, s.session_queries, s.day_queries), (2, 5, 6));
        assert_eq!(top_sessions_share(&log, day, 0, 10).unwrap().share, 1.0);
        assert!(top_sessions_share(&log, NaiveDate::from_ymd_opt(2025, 1, 1).unwrap(), 0, 2).is_err());
    }

    #[test]
    fn cost_report_examples() {
        let r = CostReport::from_totals(834.77, 6.23, 1889).unwrap();
        assert!((r.per_query_cost - 0.445).abs() < 5e-4);
        assert!((r.token_per_query_cost - 0.0033).abs() < 5e-5);
        let zero = CostReport::from_totals(0.0, 0.0, 10).unwrap();
        assert_eq!(zero.per_query_cost, 0.0);
        assert!(matches!(CostReport::from_totals(1.0, 1.0, 0), Err(TelemetryError::NoQueries)));
        let prices = PriceTable { input_per_1k: 0.15, output_per_1k: 0.6 };
        let log = vec![record(at(1, 0, 0), "a"); 10];
        let via_log = cost_report(&log, 1.0, &prices).unwrap();
        assert!((via_log.token_cost - 10.0 * (0.1 * 0.15 + 0.05 * 0.6)).abs() < 1e-9);
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let log = vec![record(at(18, 9, 0), "a"), record(at(19, 9, 0), "b")];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &log).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), log);
        assert!(matches!(read_jsonl("{}\n".as_bytes()), Err(TelemetryError::Parse { line: 1, .. })));
    }

    fn arb_log() -> impl Strategy<Value = Vec<QueryLogRecord>> {
        prop::collection::vec((0i64..60 * 24 * 30, 0u8..6), 0..80).prop_map(|items| {
            items
                .into_iter()
                .map(|(minutes, s)| record(at(1, 0, 0) + Duration::minutes(minutes), &format!("s{s}")))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn daily_counts_sum_to_total(log in arb_log(), offset in -720i32..=840) {
            let total: u64 = daily_counts(&log, offset).iter().map(|(_, n)| n).sum();
            prop_assert_eq!(total, log.len() as u64);
        }

        #[test]
        fn day_shares_sum_to_one(log in arb_log(), offset in -720i32..=840) {
            prop_assume!(!log.is_empty());
            let mut sum = 0.0;
            for (d, _) in daily_counts(&log, offset) {
                let s = peak_share(&log, d, offset).unwrap();
                prop_assert!((0.0..=1.0).contains(&s.share));
                sum += s.share;
            }
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        #[test]
        fn summary_has_no_hidden_state(a in arb_log(), b in arb_log()) {
            let joined: Vec<_> = a.iter().chain(&b).cloned().collect();
            let once = usage_summary(&joined, 7).unwrap();
            let mut rev = joined.clone();
            rev.reverse();
            prop_assert_eq!(once, usage_summary(&rev, 7).unwrap());
            prop_assert_eq!(once.total_queries, a.len() as u64 + b.len() as u64);
        }

        #[test]
        fn records_never_contain_raw_tokens(token in "[A-Za-z0-9_-]{22}") {
            let r = record(at(1, 0, 0), &token);
            let json = serde_json::to_string(&r).unwrap();
            prop_assert!(!json.contains(&token));
        }
    }
}
