mod analyze;
mod eval;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tutor_core::gateway::{BackendConfig, Gateway};
use tutor_core::index::{retrieve, IndexSnapshot, OverlapReranker, RetrievalConfig};
use tutor_core::ingest::{ingest_corpus, load_corpus_dir, update_corpus, ChunkPolicy};
use tutor_service::{serve, ChatService, ServiceConfig};

/// Dimension of the hashing embedder used with `--mock-embedder`.
const MOCK_DIM: usize = 256;

#[derive(Parser)]
#[command(name = "tutor", version, about = "Course-grounded tutoring assistant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk and embed a corpus directory into a new snapshot.
    Ingest(IngestArgs),
    /// Replace or add documents in an existing snapshot.
    Update(UpdateArgs),
    /// Run retrieval against a snapshot.
    Query(QueryArgs),
    /// Start the HTTP chat service.
    Serve(ServeArgs),
    /// Usage, peak-day and cost reports over the query log.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Statistical evaluation helpers.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ChunkPolicy::default().max_chars)]
    max_chars: usize,
    #[arg(long, default_value_t = ChunkPolicy::default().overlap_chars)]
    overlap: usize,
    /// Use the deterministic hashing embedder instead of a live backend.
    #[arg(long)]
    mock_embedder: bool,
    /// Service config whose `[gateway]` section selects the embedding backend.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct UpdateArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    add: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ChunkPolicy::default().max_chars)]
    max_chars: usize,
    #[arg(long, default_value_t = ChunkPolicy::default().overlap_chars)]
    overlap: usize,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    q: String,
    #[arg(long, default_value_t = tutor_core::index::DEFAULT_TOP_K)]
    k: usize,
    #[arg(long)]
    mock_embedder: bool,
    /// Print keyword, vector, fusion and rerank scores for every candidate.
    #[arg(long)]
    explain: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `snapshot_path` from the config.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
}

fn backend_config(config: Option<&Path>) -> Result<BackendConfig> {
    match config {
        Some(path) => Ok(ServiceConfig::load(path)?.gateway),
        None => Ok(BackendConfig::default()),
    }
}

/// Mock snapshots are reopened with the mock embedder of the same dimension.
fn gateway_for(snapshot: Option<&IndexSnapshot>, mock: bool, config: Option<&Path>) -> Result<Gateway> {
    let is_mock_snapshot = snapshot.is_some_and(|s| s.embedding_model().starts_with("mock-hash-"));
    let backend = if mock || is_mock_snapshot {
        BackendConfig::mock_echo(snapshot.map_or(MOCK_DIM, IndexSnapshot::dimension))
    } else {
        backend_config(config)?
    };
    Gateway::from_config(&backend).context("cannot build the model gateway")
}

fn ingest(args: IngestArgs) -> Result<()> {
    let policy = ChunkPolicy::new(args.max_chars, args.overlap)?;
    let docs = load_corpus_dir(&args.corpus)?;
    if docs.is_empty() {
        bail!("no corpus files under {}", args.corpus.display());
    }
    let gateway = gateway_for(None, args.mock_embedder, args.config.as_deref())?;
    let snapshot = ingest_corpus(&docs, &policy, &gateway)?;
    snapshot.save(&args.out)?;
    println!(
        "{} documents, {} chunks -> {} (hash {})",
        docs.len(),
        snapshot.chunks().len(),
        args.out.display(),
        snapshot.content_hash()
    );
    Ok(())
}

fn update(args: UpdateArgs) -> Result<()> {
    let policy = ChunkPolicy::new(args.max_chars, args.overlap)?;
    let base = IndexSnapshot::load(&args.snapshot)?;
    let docs = load_corpus_dir(&args.add)?;
    let gateway = gateway_for(Some(&base), false, args.config.as_deref())?;
    let next = update_corpus(&base, &docs, &policy, &gateway)?;
    next.save(&args.out)?;
    println!(
        "{} -> {} chunks after replacing {} documents -> {} (hash {})",
        base.chunks().len(),
        next.chunks().len(),
        docs.len(),
        args.out.display(),
        next.content_hash()
    );
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let snapshot = IndexSnapshot::load(&args.snapshot)?;
    let gateway = gateway_for(Some(&snapshot), args.mock_embedder, args.config.as_deref())?;
    let config = RetrievalConfig { k: args.k, ..RetrievalConfig::default() };
    let r = retrieve(&snapshot, &args.q, &gateway, &OverlapReranker, &config);
    if r.degraded {
        eprintln!("warning: query embedding failed; keyword-only results");
    }
    if args.explain {
        println!("{:<18} {:>9} {:>5} {:>9} {:>5} {:>9} {:>7} {:>9}", "chunk", "bm25", "rank", "cosine", "rank", "rrf", "rerank", "final");
        for c in &r.fused {
            let kw = c.keyword.map_or(("-".into(), "-".into()), |s| (format!("{:.4}", s.score), s.rank.to_string()));
            let vs = c.vector.map_or(("-".into(), "-".into()), |s| (format!("{:.4}", s.score), s.rank.to_string()));
            println!(
                "{:<18} {:>9} {:>5} {:>9} {:>5} {:>9.5} {:>7.3} {:>9.5}",
                c.chunk_id, kw.0, kw.1, vs.0, vs.1, c.rrf_score, c.rerank_score, c.score
            );
        }
        println!();
    }
    for res in &r.results {
        let preview: String = res.chunk.text.chars().take(100).collect::<String>().replace('\n', " ");
        println!(
            "{:>2}. {:.5}  {} | unit {}  {}",
            res.final_rank, res.fused_score, res.chunk.source_path, res.chunk.unit_number, preview
        );
    }
    Ok(())
}

fn run_server(args: ServeArgs) -> Result<()> {
    let mut config = ServiceConfig::load(&args.config)?;
    if let Some(port) = args.port {
        config.port = port;
    }
    let snapshot_path = args
        .snapshot
        .or_else(|| config.snapshot_path.clone())
        .context("no snapshot: pass --snapshot or set snapshot_path")?;
    let snapshot = IndexSnapshot::load(&snapshot_path)?;
    let addr: SocketAddr = format!("{}:{}", config.bind, config.port).parse().context("invalid bind address")?;
    let service = Arc::new(ChatService::from_config(config, snapshot)?);
    tokio::runtime::Runtime::new()?.block_on(serve(service, addr))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::Update(a) => update(a),
        Command::Query(a) => query(a),
        Command::Serve(a) => run_server(a),
        Command::Analyze(c) => analyze::run(c),
        Command::Eval(c) => eval::run(c),
    }
}
