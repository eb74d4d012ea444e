//! Phrase-replacement rules applied to queries before they reach retrieval or
//! the model. Used to steer around content-filter false positives.

use std::path::Path;

use regex::{NoExpand, Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyRewriteRule {
    /// Literal phrase, matched case-insensitively.
    pub pattern: String,
    pub replacement: String,
}

impl SafetyRewriteRule {
    pub fn new(pattern: impl Into<String>, replacement: impl Into<String>) -> Self {
        Self { pattern: pattern.into(), replacement: replacement.into() }
    }
}

#[derive(Debug, Deserialize)]
struct RulesFile {
    #[serde(default, rename = "rule")]
    rules: Vec<SafetyRewriteRule>,
}

/// An ordered, validated rule list with compiled matchers.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<SafetyRewriteRule>,
    matchers: Vec<Regex>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub sanitized: String,
    /// Indices of the rules that matched at least once.
    pub applied: Vec<usize>,
}

impl RuleSet {
    /// Rejects empty patterns and any replacement that contains a pattern
    /// from the set, so a second pass can never fire.
    pub fn new(rules: Vec<SafetyRewriteRule>) -> Result<Self, OrchestratorError> {
        let mut matchers = Vec::with_capacity(rules.len());
        for (i, rule) in rules.iter().enumerate() {
            if rule.pattern.trim().is_empty() {
                return Err(OrchestratorError::InvalidRule(format!("rule {i} has an empty pattern")));
            }
            matchers.push(
                RegexBuilder::new(&regex::escape(&rule.pattern))
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| OrchestratorError::InvalidRule(e.to_string()))?,
            );
        }
        for (i, rule) in rules.iter().enumerate() {
            if let Some(j) = matchers.iter().position(|m| m.is_match(&rule.replacement)) {
                return Err(OrchestratorError::InvalidRule(format!(
                    "replacement of rule {i} contains the pattern of rule {j} ({:?})",
                    rules[j].pattern
                )));
            }
        }
        Ok(Self { rules, matchers })
    }

    pub fn empty() -> Self {
        Self { rules: Vec::new(), matchers: Vec::new() }
    }

    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let file: RulesFile = toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        Self::new(file.rules)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The shipped rule table.
    pub fn default_rules() -> Self {
        Self::from_toml(include_str!("../../assets/rewrite_rules.toml")).expect("bundled rules are valid")
    }

    pub fn rules(&self) -> &[SafetyRewriteRule] {
        &self.rules
    }
}

/// Replaces every case-insensitive occurrence of each pattern, rules in
/// order, single pass.
pub fn apply_rewrite_rules(query: &str, rules: &RuleSet) -> Rewrite {
    let mut sanitized = query.to_owned();
    let mut applied = Vec::new();
    for (i, (rule, matcher)) in rules.rules.iter().zip(&rules.matchers).enumerate() {
        if matcher.is_match(&sanitized) {
            sanitized = matcher.replace_all(&sanitized, NoExpand(&rule.replacement)).into_owned();
            applied.push(i);
        }
    }
    Rewrite { sanitized, applied }
}
