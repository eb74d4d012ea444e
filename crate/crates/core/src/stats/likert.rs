use std::fmt;

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LikertValue {
    Score(u8),
    NotApplicable,
}

impl LikertValue {
    pub fn score(value: u8) -> Result<Self, StatsError> {
        if (1..=5).contains(&value) {
            Ok(Self::Score(value))
        } else {
            Err(StatsError::InvalidLikert(value.to_string()))
        }
    }

    /// Parses `1`..`5`, or `na_token` (compared after trimming, ignoring case).
    pub fn parse(raw: &str, na_token: &str) -> Result<Self, StatsError> {
        let raw = raw.trim();
        if raw.eq_ignore_ascii_case(na_token.trim()) {
            return Ok(Self::NotApplicable);
        }
        raw.parse::<u8>()
            .map_err(|_| StatsError::InvalidLikert(raw.to_owned()))
            .and_then(Self::score)
    }

    /// Like [`parse`](Self::parse), but also accepts the agreement and
    /// frequency labels of a five-point scale ("Strongly agree", "Never", ...)
    /// and "Not applicable".
    pub fn parse_label(raw: &str, na_token: &str) -> Result<Self, StatsError> {
        if let Ok(v) = Self::parse(raw, na_token) {
            return Ok(v);
        }
        let norm: String = raw
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
            .collect::<String>()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        let score = match norm.as_str() {
            "not applicable" | "n a" | "na" => return Ok(Self::NotApplicable),
            "strongly disagree" | "never" => 1,
            "disagree" | "rarely" => 2,
            "neutral" | "neither agree nor disagree" | "sometimes" => 3,
            "agree" | "often" | "usually" => 4,
            "strongly agree" | "always" => 5,
            _ => return Err(StatsError::InvalidLikert(raw.trim().to_owned())),
        };
        Self::score(score)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertResponses {
    pub values: Vec<LikertValue>,
}

impl LikertResponses {
    pub fn new(values: Vec<LikertValue>) -> Self {
        Self { values }
    }

    pub fn parse<'a>(raw: impl IntoIterator<Item = &'a str>, na_token: &str) -> Result<Self, StatsError> {
        raw.into_iter()
            .map(|r| LikertValue::parse_label(r, na_token))
            .collect::<Result<_, _>>()
            .map(Self::new)
    }

    /// Scores as `Some`, N/A as `None`.
    pub fn from_options(values: &[Option<u8>]) -> Result<Self, StatsError> {
        values
            .iter()
            .map(|v| v.map_or(Ok(LikertValue::NotApplicable), LikertValue::score))
            .collect::<Result<_, _>>()
            .map(Self::new)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikertStats {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub n: usize,
}

impl fmt::Display for LikertStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mean={:.2} sd={:.2} n={}", self.mean, self.sd, self.n)
    }
}

pub fn likert_stats(responses: &LikertResponses) -> Result<LikertStats, StatsError> {
    if responses.values.is_empty() {
        return Err(StatsError::Empty);
    }
    let scores: Vec<f64> = responses
        .values
        .iter()
        .filter_map(|v| match v {
            LikertValue::Score(s) => Some(f64::from(*s)),
            LikertValue::NotApplicable => None,
        })
        .collect();
    if scores.is_empty() {
        return Err(StatsError::AllNa);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(LikertStats { mean, sd: var.sqrt(), n: scores.len() })
}
