use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::Deserialize;
use tutor_core::stats::{
    bonferroni, comparison_table, likert_stats, paired_permutation_test, render_table, LikertResponses,
    PairedSamples, PermTestConfig, SurveyRow,
};

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Two-sided paired permutation test on two score columns.
    Permtest(PermtestArgs),
    /// Mean, population sd and n of one Likert column, N/A excluded.
    Likert(LikertArgs),
    /// Percent deltas between two summary tables (label,mean,sd,n).
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct PermtestArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    col_a: String,
    #[arg(long)]
    col_b: String,
    /// Column identifying each subject; row numbers are used otherwise.
    #[arg(long)]
    id_col: Option<String>,
    #[arg(long, default_value = "N/A")]
    na_token: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = PermTestConfig::default().n_resamples)]
    resamples: u64,
    /// Number of comparisons for a Bonferroni-adjusted p-value.
    #[arg(long)]
    comparisons: Option<usize>,
}

#[derive(Args)]
pub struct LikertArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    col: String,
    #[arg(long, default_value = "N/A")]
    na_token: String,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    ours: PathBuf,
    #[arg(long)]
    theirs: PathBuf,
}

struct Table {
    headers: csv::StringRecord,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
        let headers = reader.headers()?.clone();
        let rows = reader.records().collect::<Result<_, _>>()?;
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h.trim() == name)
            .with_context(|| format!("no column {name:?}; columns are {:?}", self.headers.iter().collect::<Vec<_>>()))
    }
}

fn missing(cell: &str, na_token: &str) -> bool {
    let cell = cell.trim();
    cell.is_empty() || cell.eq_ignore_ascii_case(na_token.trim())
}

fn permtest(args: PermtestArgs) -> Result<()> {
    let table = Table::read(&args.csv)?;
    let (ca, cb) = (table.column(&args.col_a)?, table.column(&args.col_b)?);
    let cid = args.id_col.as_deref().map(|c| table.column(c)).transpose()?;
    let (mut ids, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0;
    for (i, row) in table.rows.iter().enumerate() {
        let (ra, rb) = (row.get(ca).unwrap_or(""), row.get(cb).unwrap_or(""));
        if missing(ra, &args.na_token) || missing(rb, &args.na_token) {
            skipped += 1;
            continue;
        }
        let parse = |v: &str| v.trim().parse::<f64>().with_context(|| format!("row {}: not a number: {v:?}", i + 2));
        a.push(parse(ra)?);
        b.push(parse(rb)?);
        ids.push(cid.and_then(|c| row.get(c)).map_or_else(|| (i + 1).to_string(), str::to_owned));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} rows without both scores");
    }
    let samples = PairedSamples::new(ids, a, b)?;
    let config = PermTestConfig { seed: args.seed, n_resamples: args.resamples, ..PermTestConfig::default() };
    let r = paired_permutation_test(&samples, &config)?;
    println!("pairs        {}", samples.len());
    println!("t            {:.4}", r.t_statistic);
    println!("p            {:.4}", r.p_value);
    if let Some(m) = args.comparisons {
        println!("p (Bonf. x{m}) {:.4}", bonferroni(r.p_value, m));
    }
    println!("permutations {} ({})", r.n_permutations_used, if r.exhaustive { "exhaustive" } else { "Monte Carlo" });
    Ok(())
}

fn likert(args: LikertArgs) -> Result<()> {
    let table = Table::read(&args.csv)?;
    let col = table.column(&args.col)?;
    let cells = table.rows.iter().filter_map(|r| r.get(col)).filter(|c| !c.trim().is_empty());
    let responses = LikertResponses::parse(cells, &args.na_token)?;
    println!("{}: {}", args.col, likert_stats(&responses)?);
    Ok(())
}

#[derive(Deserialize)]
struct SummaryRow {
    label: String,
    mean: f64,
    sd: f64,
    n: usize,
}

fn summary(path: &Path) -> Result<Vec<SurveyRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let rows: Vec<SummaryRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("{}: expected columns label,mean,sd,n", path.display()))?;
    if rows.is_empty() {
        bail!("{} has no rows", path.display());
    }
    Ok(rows.into_iter().map(|r| SurveyRow::new(r.label, r.mean, r.sd, r.n)).collect())
}

fn compare(args: CompareArgs) -> Result<()> {
    let rows = comparison_table(&summary(&args.ours)?, &summary(&args.theirs)?)?;
    print!("{}", render_table(&rows));
    Ok(())
}

pub fn run(command: EvalCommand) -> Result<()> {
    match command {
        EvalCommand::Permtest(a) => permtest(a),
        EvalCommand::Likert(a) => likert(a),
        EvalCommand::Compare(a) => compare(a),
    }
}
