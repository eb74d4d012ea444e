//! Prompt template population.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use super::{ConversationTurn, OrchestratorError};
use crate::gateway::{ChatMessage, ChatRequest, Role};
use crate::index::RetrievalResult;

pub const CONTEXT: &str = "context";
pub const HISTORY: &str = "history";
pub const QUESTION: &str = "question";
pub const CURRENT_DATETIME: &str = "current_datetime";
/// Optional; receives [`PromptTemplate::directives`].
pub const DIRECTIVES: &str = "directives";

const REQUIRED: [&str; 4] = [CONTEXT, HISTORY, QUESTION, CURRENT_DATETIME];
pub const NONE_SENTINEL: &str = "(none)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    template_text: String,
    directives: String,
}

fn occurrences(text: &str, name: &str) -> usize {
    text.matches(&format!("{{{name}}}")).count()
}

impl PromptTemplate {
    /// Requires each of `{context}`, `{history}`, `{question}` and
    /// `{current_datetime}` exactly once, and `{directives}` at most once.
    pub fn new(template_text: impl Into<String>, directives: impl Into<String>) -> Result<Self, OrchestratorError> {
        let template_text = template_text.into();
        for name in REQUIRED {
            let n = occurrences(&template_text, name);
            if n != 1 {
                return Err(OrchestratorError::Template(format!(
                    "placeholder {{{name}}} must appear exactly once, found {n}"
                )));
            }
        }
        if occurrences(&template_text, DIRECTIVES) > 1 {
            return Err(OrchestratorError::Template("placeholder {directives} appears more than once".into()));
        }
        Ok(Self { template_text, directives: directives.into() })
    }

    pub fn default_template() -> Self {
        Self::new(
            include_str!("../../assets/prompt_template.txt"),
            include_str!("../../assets/directives.txt").trim_end(),
        )
        .expect("bundled template is valid")
    }

    /// Loads a template file; the bundled directive block fills `{directives}`.
    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        Self::new(text, include_str!("../../assets/directives.txt").trim_end())
    }

    pub fn template_text(&self) -> &str {
        &self.template_text
    }

    pub fn directives(&self) -> &str {
        &self.directives
    }

    /// Substitutes placeholders in one left-to-right pass; substituted values
    /// are never rescanned, so retrieved text containing `{question}` stays
    /// literal.
    pub fn render(&self, context: &str, history: &str, question: &str, current_datetime: &str) -> String {
        let mut out = String::with_capacity(self.template_text.len() + context.len() + history.len());
        let mut rest = self.template_text.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open + 1..];
            let value = [
                (CONTEXT, context),
                (HISTORY, history),
                (QUESTION, question),
                (CURRENT_DATETIME, current_datetime),
                (DIRECTIVES, self.directives.as_str()),
            ]
            .into_iter()
            .find(|(name, _)| tail.starts_with(name) && tail[name.len()..].starts_with('}'));
            match value {
                Some((name, v)) => {
                    out.push_str(v);
                    rest = &tail[name.len() + 1..];
                }
                None => {
                    out.push('{');
                    rest = tail;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

pub fn source_header(result: &RetrievalResult) -> String {
    format!(
        "SOURCE: {} | unit {} | id {}",
        result.chunk.source_path, result.chunk.unit_number, result.chunk.chunk_id
    )
}

pub fn render_context(results: &[RetrievalResult]) -> String {
    if results.is_empty() {
        return NONE_SENTINEL.into();
    }
    results
        .iter()
        .map(|r| format!("{}\n{}", source_header(r), r.chunk.text.trim_end()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_history(history: &[ConversationTurn]) -> String {
    if history.is_empty() {
        return NONE_SENTINEL.into();
    }
    history
        .iter()
        .map(|t| format!("Student: {}\nAssistant: {}", t.prompt_query(), t.reply))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_datetime(now: DateTime<Utc>) -> String {
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// System message = populated template; final user message = the question.
pub fn assemble_prompt(
    template: &PromptTemplate,
    results: &[RetrievalResult],
    history: &[ConversationTurn],
    question: &str,
    now: DateTime<Utc>,
    settings: &GenerationSettings,
) -> ChatRequest {
    let system = template.render(
        &render_context(results),
        &render_history(history),
        question,
        &render_datetime(now),
    );
    ChatRequest {
        model_id: settings.model_id.clone(),
        messages: vec![ChatMessage::new(Role::System, system), ChatMessage::new(Role::User, question)],
        temperature: settings.temperature,
        max_output_tokens: settings.max_output_tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Chunk;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn result(path: &str, unit: u32, text: &str, rank: usize) -> RetrievalResult {
        RetrievalResult {
            chunk: Chunk::new(path, unit, 0, text.into()),
            keyword_score: 0.0,
            vector_score: 0.0,
            rrf_score: 0.0,
            rerank_score: 0.0,
            fused_score: 0.0,
            final_rank: rank,
        }
    }

    fn settings() -> GenerationSettings {
        GenerationSettings { model_id: "m".into(), temperature: 0.2, max_output_tokens: 100 }
    }

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 3, 19, 9, 0, 0).unwrap()
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::new("{context}{history}{question}", "").is_err());
        assert!(PromptTemplate::new("{context}{history}{question}{current_datetime}{context}", "").is_err());
        assert!(PromptTemplate::new("{context}{history}{question}{current_datetime}", "").is_ok());
        assert!(PromptTemplate::new("{directives}{context}{history}{question}{current_datetime}{directives}", "").is_err());
    }

    #[test]
    fn context_headers_in_rank_order() {
        let t = PromptTemplate::default_template();
        let results = [result("slides/w1.pdf", 3, "Gamma.", 1), result("notes/b.txt", 1, "Beta.", 2)];
        let req = assemble_prompt(&t, &results, &[], "q?", now(), &settings());
        let system = req.system_message().unwrap();
        let headers: Vec<_> = system.lines().filter(|l| l.starts_with("SOURCE: ")).collect();
        assert_eq!(headers.len(), 2);
        assert!(headers[0].starts_with("SOURCE: slides/w1.pdf | unit 3 | id "));
        assert!(headers[1].starts_with("SOURCE: notes/b.txt | unit 1 | id "));
        assert_eq!(req.last_user_message(), Some("q?"));
        req.validate().unwrap();
    }

    #[test]
    fn datetime_and_sentinels() {
        let t = PromptTemplate::default_template();
        let req = assemble_prompt(&t, &[], &[], "when is exam 2?", now(), &settings());
        let system = req.system_message().unwrap();
        assert_eq!(system.matches("2025-03-19").count(), 1);
        assert!(system.contains("2025-03-19T09:00:00Z"));
        assert!(system.matches(NONE_SENTINEL).count() >= 2);
        for name in REQUIRED {
            assert!(!system.contains(&format!("{{{name}}}")));
        }
        assert!(system.contains("step by step"));
    }

    #[test]
    fn placeholder_text_in_values_is_not_expanded() {
        let t = PromptTemplate::new("C={context} H={history} Q={question} T={current_datetime}", "").unwrap();
        let out = t.render("{question}", "-", "real", "now");
        assert_eq!(out, "C={question} H=- Q=real T=now");
        assert_eq!(t.render("{", "}", "{x}", "t"), "C={ H=} Q={x} T=t");
    }

    proptest! {
        #[test]
        fn date_appears_exactly_once(secs in 0i64..4_000_000_000) {
            let now = Utc.timestamp_opt(secs, 0).unwrap();
            let t = PromptTemplate::default_template();
            let results = [result("slides/w1.pdf", 1, "Lecture on motion estimation.", 1)];
            let req = assemble_prompt(&t, &results, &[], "what is due?", now, &settings());
            let date = now.format("%Y-%m-%d").to_string();
            prop_assert_eq!(req.system_message().unwrap().matches(&date).count(), 1);
        }
    }
}
