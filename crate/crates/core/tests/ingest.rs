use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;

use tutor_core::gateway::mock::{EchoChat, HashEmbedder};
use tutor_core::gateway::Gateway;
use tutor_core::index::{keyword_search, IndexError, IndexSnapshot};
use tutor_core::ingest::{
    ingest_corpus, load_corpus_dir, update_corpus, ChunkPolicy, DocKind, IngestError, SourceDocument, Unit,
};
use tutor_core::text::tokenize;

fn gateway(dim: usize) -> Gateway {
    Gateway::new(Arc::new(EchoChat), Arc::new(HashEmbedder::new(dim)))
}

fn unit(number: u32, text: &str) -> Unit {
    Unit { number, text: text.into() }
}

/// Two documents, five slides.
fn fixture() -> Vec<SourceDocument> {
    vec![
        SourceDocument::new(
            "slides/week3.pdf",
            DocKind::Slides,
            vec![
                unit(1, "Image matting estimates alpha."),
                unit(2, "Trimaps mark known foreground and background."),
                unit(3, "Bayesian matting models colour distributions."),
            ],
        ),
        SourceDocument::new(
            "slides/week5.pdf",
            DocKind::Slides,
            vec![unit(1, "Optical flow and the brightness constancy assumption."), unit(2, "Lucas Kanade solves a local least squares system.")],
        ),
    ]
}

#[test]
fn fixture_corpus_yields_one_chunk_per_slide() {
    let snap = ingest_corpus(&fixture(), &ChunkPolicy::default(), &gateway(32)).unwrap();
    assert_eq!(snap.chunks().len(), 5);
    assert!(snap.chunks().iter().all(|c| c.embedding.as_ref().map(|e| e.dim()) == Some(32)));

    let mut expected = BTreeSet::new();
    for doc in fixture() {
        for u in &doc.units {
            expected.extend(tokenize(&u.text));
        }
    }
    let vocab: BTreeSet<String> = snap.vocabulary().map(str::to_owned).collect();
    assert_eq!(vocab, expected);
}

#[test]
fn ingest_is_deterministic_up_to_timestamp() {
    let a = ingest_corpus(&fixture(), &ChunkPolicy::default(), &gateway(32)).unwrap();
    let mut reversed = fixture();
    reversed.reverse();
    let b = ingest_corpus(&reversed, &ChunkPolicy::default(), &gateway(32)).unwrap();
    assert_eq!(a.content_hash(), b.content_hash());
    assert_eq!(a.chunks(), b.chunks());
}

#[test]
fn update_adds_and_replaces() {
    let gw = gateway(32);
    let base = ingest_corpus(&fixture(), &ChunkPolicy::default(), &gw).unwrap();
    let added = SourceDocument::new("announcements/exam2.txt", DocKind::Announcement, vec![unit(1, "Exam two is on the nineteenth of March.")]);
    let next = update_corpus(&base, std::slice::from_ref(&added), &ChunkPolicy::default(), &gw).unwrap();
    assert_eq!(next.chunks().len(), base.chunks().len() + 1);
    assert!(next.created_at() > base.created_at());
    assert_eq!(base.chunks().len(), 5, "input snapshot untouched");
    let hits = keyword_search(&next, "nineteenth", 10);
    assert_eq!(hits.len(), 1);
    assert_eq!(next.chunk(hits[0].index).source_path, "announcements/exam2.txt");

    // applying the same update again changes nothing but the timestamp
    let again = update_corpus(&next, &[added], &ChunkPolicy::default(), &gw).unwrap();
    assert_eq!(again.content_hash(), next.content_hash());

    // replacement drops the old units of that path
    let shorter = SourceDocument::new("slides/week3.pdf", DocKind::Slides, vec![unit(1, "Matting, revised.")]);
    let replaced = update_corpus(&next, &[shorter], &ChunkPolicy::default(), &gw).unwrap();
    assert_eq!(replaced.chunks().iter().filter(|c| c.source_path == "slides/week3.pdf").count(), 1);
    assert_eq!(replaced.chunks().len(), 4);
}

#[test]
fn update_rejects_other_dimension() {
    let base = ingest_corpus(&fixture(), &ChunkPolicy::default(), &gateway(32)).unwrap();
    let err = update_corpus(&base, &fixture()[..1], &ChunkPolicy::default(), &gateway(16)).unwrap_err();
    assert!(matches!(err, IngestError::Index(IndexError::DimensionMismatch { expected: 32, got: 16 })));
}

#[test]
fn snapshot_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.json");
    let snap = ingest_corpus(&fixture(), &ChunkPolicy::default(), &gateway(32)).unwrap();
    snap.save(&path).unwrap();
    let loaded = IndexSnapshot::load(&path).unwrap();
    assert_eq!(loaded.content_hash(), snap.content_hash());
    assert_eq!(loaded.chunks(), snap.chunks());
    assert_eq!(loaded.created_at(), snap.created_at());
    assert_eq!(keyword_search(&loaded, "matting alpha", 10), keyword_search(&snap, "matting alpha", 10));

    let tampered = fs::read_to_string(&path).unwrap().replace("Trimaps", "Trimaps!");
    assert!(matches!(IndexSnapshot::from_json(&tampered), Err(IndexError::Corrupt(_))));
}

#[test]
fn corpus_directory_loading() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("slides")).unwrap();
    fs::write(
        dir.path().join("slides/week3.txt"),
        "path: slides/week3.pdf\nkind: slides\n\n=== unit 1 ===\nImage matting.\n=== unit 2 ===\nTrimaps.\n",
    )
    .unwrap();
    fs::write(dir.path().join("schedule.txt"), "Exam two is on March 19.\n").unwrap();
    fs::write(dir.path().join(".hidden"), "ignored").unwrap();
    let docs = load_corpus_dir(dir.path()).unwrap();
    let paths: Vec<&str> = docs.iter().map(|d| d.path.as_str()).collect();
    assert_eq!(paths, ["schedule.txt", "slides/week3.pdf"]);
    assert_eq!(docs[1].kind, DocKind::Slides);
    assert_eq!(docs[1].units.len(), 2);
    let snap = ingest_corpus(&docs, &ChunkPolicy::default(), &gateway(32)).unwrap();
    assert_eq!(snap.chunks().len(), 3);
}

proptest::proptest! {
    #[test]
    fn json_round_trip_is_bit_exact(values in proptest::collection::vec(-1e3f64..1e3, 1..16)) {
        use tutor_core::gateway::EmbeddingVector;
        use tutor_core::ingest::Chunk;
        proptest::prop_assume!(values.iter().any(|v| *v != 0.0));
        let mut chunk = Chunk::new("notes.txt", 1, 0, "some text".into());
        chunk.embedding = Some(EmbeddingVector::new(values.clone()).unwrap());
        let snap = IndexSnapshot::build(vec![chunk], values.len(), "test", chrono::Utc::now()).unwrap();
        let back = IndexSnapshot::from_json(&snap.to_json()).unwrap();
        proptest::prop_assert_eq!(back.content_hash(), snap.content_hash());
        proptest::prop_assert_eq!(back.vector(0).values(), snap.vector(0).values());
    }
}
