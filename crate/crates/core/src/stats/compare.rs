use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::StatsError;

/// `100 * (ours - theirs) / theirs`.
pub fn delta_percent(ours: f64, theirs: f64) -> Result<f64, StatsError> {
    if theirs == 0.0 {
        return Err(StatsError::UndefinedDelta);
    }
    Ok(100.0 * (ours - theirs) / theirs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRow {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl SurveyRow {
    pub fn new(label: impl Into<String>, mean: f64, sd: f64, n: usize) -> Self {
        Self { label: label.into(), mean, sd, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub ours: SurveyRow,
    pub theirs: SurveyRow,
    pub delta_mean_pct: f64,
    pub delta_sd_pct: f64,
}

/// Pairs rows by position. The label comes from `ours`.
pub fn comparison_table(ours: &[SurveyRow], theirs: &[SurveyRow]) -> Result<Vec<ComparisonRow>, StatsError> {
    if ours.len() != theirs.len() {
        return Err(StatsError::Precondition(format!(
            "row count mismatch: {} vs {}",
            ours.len(),
            theirs.len()
        )));
    }
    ours.iter()
        .zip(theirs)
        .map(|(o, t)| {
            Ok(ComparisonRow {
                label: o.label.clone(),
                ours: o.clone(),
                theirs: t.clone(),
                delta_mean_pct: delta_percent(o.mean, t.mean)?,
                delta_sd_pct: delta_percent(o.sd, t.sd)?,
            })
        })
        .collect()
}

fn signed(x: f64) -> String {
    // avoid printing "-0.0"
    let r = (x * 10.0).round() / 10.0;
    if r == 0.0 {
        "0.0".into()
    } else {
        format!("{r:+.1}")
    }
}

pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("| Item | Ours μ | Ours σ | Ours N | Theirs μ | Theirs σ | Theirs N | Δμ (%) | Δσ (%) |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.2} | {} | {:.2} | {:.2} | {} | {} | {} |",
            r.label,
            r.ours.mean,
            r.ours.sd,
            r.ours.n,
            r.theirs.mean,
            r.theirs.sd,
            r.theirs.n,
            signed(r.delta_mean_pct),
            signed(r.delta_sd_pct)
        );
    }
    out
}
