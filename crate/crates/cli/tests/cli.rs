use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(dir: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(dir)
}

fn tutor(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_tutor")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "tutor {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn ingest_update_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("a.json");
    let next = dir.path().join("b.json");
    let (corpus, extra) = (data("sample-corpus"), data("sample-update"));
    tutor(&["ingest", "--corpus", corpus.to_str().unwrap(), "--out", snap.to_str().unwrap(), "--mock-embedder"]);
    let again = dir.path().join("a2.json");
    tutor(&["ingest", "--corpus", corpus.to_str().unwrap(), "--out", again.to_str().unwrap(), "--mock-embedder"]);
    let hash = |p: &Path| tutor_core::index::IndexSnapshot::load(p).unwrap().content_hash().to_owned();
    assert_eq!(hash(&snap), hash(&again));

    let out = stdout(&tutor(&["query", "--snapshot", snap.to_str().unwrap(), "--q", "what is alpha matting", "--k", "2"]));
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().next().unwrap().contains("slides/week3-matting.pdf"), "{out}");

    tutor(&["update", "--snapshot", snap.to_str().unwrap(), "--add", extra.to_str().unwrap(), "--out", next.to_str().unwrap()]);
    let out = stdout(&tutor(&["query", "--snapshot", next.to_str().unwrap(), "--q", "when is exam 2", "--explain"]));
    assert!(out.contains("bm25") && out.contains("rerank"));
    let first_result = out.lines().find(|l| l.trim_start().starts_with("1.")).unwrap();
    assert!(first_result.contains("announcements/exam2.txt"), "{out}");
}

#[test]
fn analyze_reports() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let mut lines = String::new();
    for (i, (day, session)) in [(1, "a"), (1, "a"), (1, "b"), (2, "c")].iter().enumerate() {
        lines.push_str(&format!(
            "{{\"timestamp\":\"2025-03-{day:02}T10:0{i}:00Z\",\"session_token_hash\":\"{session}\",\"prompt_tokens\":1000,\"completion_tokens\":500,\"degraded\":false,\"violations\":0}}\n"
        ));
    }
    std::fs::write(&log, lines).unwrap();
    let log = log.to_str().unwrap();

    let csv = dir.path().join("daily.csv");
    let out = stdout(&tutor(&["analyze", "usage", "--log", log, "--cohort", "2", "--csv", csv.to_str().unwrap()]));
    assert!(out.contains("queries per student") && out.contains("2.0"), "{out}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), "date,queries\n2025-03-01,3\n2025-03-02,1\n");

    let out = stdout(&tutor(&["analyze", "peak", "--log", log, "--top-sessions", "1"]));
    assert!(out.contains("2025-03-01") && out.contains("75%") && out.contains("67%"), "{out}");

    let prices = dir.path().join("prices.toml");
    std::fs::write(&prices, "price_in_per_1k = 0.001\nprice_out_per_1k = 0.002\n").unwrap();
    let out = stdout(&tutor(&["analyze", "cost", "--log", log, "--fixed", "10", "--config", prices.to_str().unwrap()]));
    // 4000 prompt tokens cost 0.004 and 2000 completion tokens 0.004
    assert!(out.contains("10.01") && out.contains("2.502") && out.contains("0.0020"), "{out}");
}

#[test]
fn eval_commands() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    std::fs::write(&scores, "id,exam1,exam2\ns1,1,0\ns2,2,0\ns3,3,0\ns4,N/A,5\n").unwrap();
    let out = stdout(&tutor(&[
        "eval", "permtest", "--csv", scores.to_str().unwrap(), "--col-a", "exam1", "--col-b", "exam2", "--id-col", "id",
    ]));
    assert!(out.contains("pairs        3") && out.contains("p            0.2500") && out.contains("exhaustive"), "{out}");

    let survey = dir.path().join("survey.csv");
    std::fs::write(&survey, "Q1\n5\n4\nAgree\nN/A\n").unwrap();
    let out = stdout(&tutor(&["eval", "likert", "--csv", survey.to_str().unwrap(), "--col", "Q1"]));
    assert!(out.contains("mean=4.33 sd=0.47 n=3"), "{out}");

    let ours = dir.path().join("ours.csv");
    let theirs = dir.path().join("theirs.csv");
    std::fs::write(&ours, "label,mean,sd,n\nQ2,4.19,0.81,36\n").unwrap();
    std::fs::write(&theirs, "label,mean,sd,n\nQ2,4.4,0.77,30\n").unwrap();
    let out = stdout(&tutor(&["eval", "compare", "--ours", ours.to_str().unwrap(), "--theirs", theirs.to_str().unwrap()]));
    assert!(out.contains("-4.8") && out.contains("+5.2"), "{out}");
}
