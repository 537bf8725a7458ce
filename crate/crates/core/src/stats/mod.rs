//! Correlation and agreement statistics, and the metric-vs-human report pipelines.

pub mod correlation;
pub mod fisher;
pub mod krippendorff;
pub mod ranking;
pub mod report;

pub use correlation::{average_ranks, kendall, pearson, spearman};
pub use fisher::{fisher_z_mean, FISHER_CLAMP};
pub use krippendorff::{krippendorff_alpha, Level};
pub use ranking::{footrule, rank_by_mean, ranking_rho, RankingComparison};
pub use report::{hh_pipeline, mh_pipeline, CorrelationReport, HumanRow, ModelCorrelation, PairedRow, ReportKind, TaskCorrelation, Triple};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("series lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("a series is constant; correlation is undefined")]
    DegenerateConstant,
    #[error("non-finite input")]
    NonFinite,
    #[error("empty list")]
    EmptyList,
    #[error("rankings are not permutations of the same set")]
    SetMismatch,
    #[error("need two raters on a shared unit and at least two distinct values")]
    InsufficientOverlap,
}
