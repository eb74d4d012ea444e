//! Plain-text corpus files.
//!
//! ```text
//! path: slides/week3.pdf
//! kind: slides
//!
//! === unit 1 ===
//! Slide one text.
//! === unit 2 ===
//! Slide two text.
//! ```
//!
//! Front-matter lines (`key: value`) come before the first unit marker. A
//! file without `path:` is cited by its path relative to the corpus root; a
//! file without any marker is a single unit 1.

use std::path::Path;

use regex::Regex;
use walkdir::WalkDir;

use super::{DocKind, IngestError, SourceDocument, Unit};

fn unit_marker() -> &'static Regex {
    static MARKER: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    MARKER.get_or_init(|| Regex::new(r"^===\s*unit\s+(\d+)\s*===\s*$").expect("valid regex"))
}

pub fn parse_corpus_file(contents: &str, default_path: &str) -> Result<SourceDocument, IngestError> {
    let parse_err = |reason: String| IngestError::Parse { file: default_path.to_owned(), reason };
    let mut path: Option<String> = None;
    let mut kind = DocKind::Other;
    let mut units: Vec<Unit> = Vec::new();
    let mut current: Option<(u32, Vec<&str>)> = None;
    let mut preamble: Vec<&str> = Vec::new();

    let finish = |units: &mut Vec<Unit>, number: u32, lines: &[&str]| {
        units.push(Unit { number, text: lines.join("\n").trim().to_owned() });
    };

    for line in contents.lines() {
        if let Some(caps) = unit_marker().captures(line.trim_end()) {
            let number: u32 = caps[1]
                .parse()
                .map_err(|_| parse_err(format!("bad unit number in {line:?}")))?;
            if let Some((n, lines)) = current.take() {
                finish(&mut units, n, &lines);
            }
            current = Some((number, Vec::new()));
            continue;
        }
        match current.as_mut() {
            Some((_, lines)) => lines.push(line),
            None => {
                let trimmed = line.trim();
                if let Some(value) = trimmed.strip_prefix("path:") {
                    path = Some(value.trim().to_owned());
                } else if let Some(value) = trimmed.strip_prefix("kind:") {
                    kind = value.parse().map_err(parse_err)?;
                } else {
                    preamble.push(line);
                }
            }
        }
    }
    let stray_text = preamble.iter().any(|l| !l.trim().is_empty());
    match current.take() {
        Some(_) if stray_text => return Err(parse_err("text before the first unit marker".into())),
        Some((n, lines)) => finish(&mut units, n, &lines),
        None if stray_text => finish(&mut units, 1, &preamble),
        None => {}
    }

    let doc = SourceDocument {
        path: path.filter(|p| !p.is_empty()).unwrap_or_else(|| default_path.to_owned()),
        kind,
        units,
    };
    doc.validate()?;
    Ok(doc)
}

/// Reads every non-hidden regular file under `root`, in path order.
pub fn load_corpus_dir(root: &Path) -> Result<Vec<SourceDocument>, IngestError> {
    let mut docs = Vec::new();
    let walker = WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.map_err(|e| IngestError::Io {
            path: root.display().to_string(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let contents = std::fs::read_to_string(entry.path()).map_err(|source| IngestError::Io {
            path: entry.path().display().to_string(),
            source,
        })?;
        let relative = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        docs.push(parse_corpus_file(&contents, &relative)?);
    }
    Ok(docs)
}
