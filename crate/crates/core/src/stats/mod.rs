//! Statistics for the course study: paired sign-flip permutation tests,
//! Likert summaries and percentage-delta comparison tables.

mod compare;
mod likert;
mod permutation;

use thiserror::Error;

pub use compare::{comparison_table, delta_percent, render_table, ComparisonRow, SurveyRow};
pub use likert::{likert_stats, LikertResponses, LikertStats, LikertValue};
pub use permutation::{
    bonferroni, paired_permutation_test, t_statistic, PairedSamples, PermTestConfig, PermutationTestResult,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("{0}")]
    Precondition(String),
    #[error("no responses")]
    Empty,
    #[error("every response is N/A")]
    AllNa,
    #[error("invalid Likert value {0:?}")]
    InvalidLikert(String),
    #[error("percentage delta is undefined when the reference value is 0")]
    UndefinedDelta,
}
