use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Subcommand};
use serde::Deserialize;
use tutor_core::gateway::{BackendConfig, PriceTable};
use tutor_core::telemetry::{
    cost_report, daily_counts, peak_day, peak_share, read_jsonl, round_to, top_sessions_share, usage_summary,
    QueryLogRecord,
};
use tutor_service::Store;

#[derive(Subcommand)]
pub enum AnalyzeCommand {
    Usage(UsageArgs),
    Peak(PeakArgs),
    Cost(CostArgs),
}

#[derive(Args)]
pub struct LogSource {
    /// JSON-lines query log.
    #[arg(long, conflicts_with = "db", required_unless_present = "db")]
    log: Option<PathBuf>,
    /// Service database, opened read-only.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Local-time offset in minutes, e.g. +60.
    #[arg(long, default_value = "0", allow_hyphen_values = true, value_parser = parse_offset)]
    tz: i32,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct UsageArgs {
    #[command(flatten)]
    source: LogSource,
    #[arg(long, default_value_t = 43)]
    cohort: u32,
}

#[derive(Args)]
pub struct PeakArgs {
    #[command(flatten)]
    source: LogSource,
    /// Defaults to the busiest day.
    #[arg(long)]
    date: Option<NaiveDate>,
    /// Also report the share of that day's queries sent by its N busiest sessions.
    #[arg(long)]
    top_sessions: Option<usize>,
}

#[derive(Args)]
pub struct CostArgs {
    #[command(flatten)]
    source: LogSource,
    /// Fixed platform cost for the period.
    #[arg(long, default_value_t = 0.0)]
    fixed: f64,
    /// TOML with `price_in_per_1k` and `price_out_per_1k`, either at the top
    /// level or under `[gateway]`.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_offset(raw: &str) -> Result<i32, String> {
    raw.trim_start_matches('+').parse().map_err(|_| format!("expected minutes such as +60 or -300, got {raw:?}"))
}

fn load(source: &LogSource) -> Result<Vec<QueryLogRecord>> {
    match (&source.log, &source.db) {
        (Some(path), _) => {
            let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            Ok(read_jsonl(BufReader::new(file))?)
        }
        (None, Some(db)) => Ok(Store::read_query_log_file(db)?),
        (None, None) => bail!("pass --log or --db"),
    }
}

fn print_table(rows: &[(&str, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<width$}  {v:>12}");
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize, Default)]
struct PriceFile {
    price_in_per_1k: Option<f64>,
    price_out_per_1k: Option<f64>,
    gateway: Option<BackendConfig>,
}

fn prices(path: Option<&Path>) -> Result<PriceTable> {
    let file: PriceFile = match path {
        Some(p) => toml::from_str(&std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?)
            .with_context(|| format!("invalid price config {}", p.display()))?,
        None => PriceFile::default(),
    };
    let fallback = file.gateway.unwrap_or_default().prices();
    Ok(PriceTable {
        input_per_1k: file.price_in_per_1k.unwrap_or(fallback.input_per_1k),
        output_per_1k: file.price_out_per_1k.unwrap_or(fallback.output_per_1k),
    })
}

pub fn run(command: AnalyzeCommand) -> Result<()> {
    match command {
        AnalyzeCommand::Usage(args) => {
            let log = load(&args.source)?;
            let s = usage_summary(&log, args.cohort)?;
            print_table(&[
                ("queries", s.total_queries.to_string()),
                ("sessions", s.total_sessions.to_string()),
                ("queries per session", format!("{:.1}", s.queries_per_session)),
                ("queries per student", format!("{:.1}", round_to(s.queries_per_student, 1))),
                ("span (days)", s.span_days.to_string()),
            ]);
            if let Some(path) = &args.source.csv {
                let rows: Vec<Vec<String>> = daily_counts(&log, args.source.tz)
                    .into_iter()
                    .map(|(d, n)| vec![d.to_string(), n.to_string()])
                    .collect();
                write_csv(path, &["date", "queries"], &rows)?;
            }
        }
        AnalyzeCommand::Peak(args) => {
            let log = load(&args.source)?;
            let date = match args.date {
                Some(d) => d,
                None => peak_day(&log, args.source.tz).context("the log is empty")?.0,
            };
            let p = peak_share(&log, date, args.source.tz)?;
            let mut rows = vec![
                ("date", p.date.to_string()),
                ("day queries", p.day_queries.to_string()),
                ("total queries", p.total_queries.to_string()),
                ("share", format!("{:.0}%", p.share * 100.0)),
            ];
            let mut csv_row = vec![p.date.to_string(), p.day_queries.to_string(), p.total_queries.to_string(), p.share.to_string()];
            if let Some(n) = args.top_sessions {
                let t = top_sessions_share(&log, date, args.source.tz, n)?;
                rows.push(("top sessions", t.sessions.to_string()));
                rows.push(("top-session queries", t.session_queries.to_string()));
                rows.push(("top-session share", format!("{:.0}%", t.share * 100.0)));
                csv_row.extend([t.sessions.to_string(), t.session_queries.to_string(), t.share.to_string()]);
            }
            print_table(&rows);
            if let Some(path) = &args.source.csv {
                let mut header = vec!["date", "day_queries", "total_queries", "share"];
                if args.top_sessions.is_some() {
                    header.extend(["top_sessions", "top_session_queries", "top_session_share"]);
                }
                write_csv(path, &header, &[csv_row])?;
            }
        }
        AnalyzeCommand::Cost(args) => {
            let log = load(&args.source)?;
            let c = cost_report(&log, args.fixed, &prices(args.config.as_deref())?)?;
            print_table(&[
                ("queries", c.queries.to_string()),
                ("fixed cost", format!("{:.2}", c.fixed_cost)),
                ("token cost", format!("{:.2}", c.token_cost)),
                ("total cost", format!("{:.2}", c.total_cost)),
                ("cost per query", format!("{:.3}", c.per_query_cost)),
                ("token cost per query", format!("{:.4}", c.token_per_query_cost)),
            ]);
            if let Some(path) = &args.source.csv {
                write_csv(
                    path,
                    &["queries", "fixed_cost", "token_cost", "total_cost", "per_query_cost", "token_per_query_cost"],
                    &[vec![
                        c.queries.to_string(),
                        c.fixed_cost.to_string(),
                        c.token_cost.to_string(),
                        c.total_cost.to_string(),
                        c.per_query_cost.to_string(),
                        c.token_per_query_cost.to_string(),
                    ]],
                )?;
            }
        }
    }
    Ok(())
}
