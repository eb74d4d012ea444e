//! Checks `[source: <path> | unit <n>]` citations in model replies against
//! the chunks retrieved for the same turn.

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::index::RetrievalResult;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Citation {
    pub source_path: String,
    pub unit_number: u32,
    pub chunk_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CitationCheck {
    pub clean_reply: String,
    /// Distinct citations in order of first appearance.
    pub citations: Vec<Citation>,
    /// Citations naming a source that was not retrieved; removed from the text.
    pub violations: u32,
}

fn citation_pattern() -> &'static Regex {
    static PATTERN: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"(?i)\[source:\s*([^\]|\s][^\]|]*?)\s*\|\s*unit\s+(\d+)\s*\]").expect("valid regex")
    })
}

pub fn validate_citations(reply: &str, results: &[RetrievalResult]) -> CitationCheck {
    let mut clean = String::with_capacity(reply.len());
    let mut citations: Vec<Citation> = Vec::new();
    let mut violations = 0;
    let mut last = 0;
    for caps in citation_pattern().captures_iter(reply) {
        let whole = caps.get(0).expect("group 0");
        let path = caps[1].trim();
        let unit: Option<u32> = caps[2].parse().ok();
        // Results are in rank order, so the best-ranked chunk of the unit wins.
        let grounded = unit.and_then(|u| {
            results
                .iter()
                .find(|r| r.chunk.source_path == path && r.chunk.unit_number == u)
        });
        match grounded {
            Some(r) => {
                let citation = Citation {
                    source_path: r.chunk.source_path.clone(),
                    unit_number: r.chunk.unit_number,
                    chunk_id: r.chunk.chunk_id.clone(),
                };
                if !citations.contains(&citation) {
                    citations.push(citation);
                }
            }
            None => {
                violations += 1;
                let mut kept = &reply[last..whole.start()];
                if kept.ends_with(' ') {
                    kept = &kept[..kept.len() - 1];
                }
                clean.push_str(kept);
                last = whole.end();
            }
        }
    }
    clean.push_str(&reply[last..]);
    CitationCheck { clean_reply: clean, citations, violations }
}
