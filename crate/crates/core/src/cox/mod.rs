//! Site-stratified Cox proportional hazards model.
//!
//! Each stratum contributes its own log partial likelihood, score and
//! information; the stratified model's totals are plain sums of those, which
//! is what lets a master fit β from per-site aggregates alone.

mod dataset;
mod fit;
mod stats;
mod summary;

#[cfg(test)]
mod tests;

pub use dataset::SurvivalDataset;
pub use fit::{cox_fit, cox_fit_pooled, CoxFitResult, FitError, FitOptions};
pub use stats::{cox_aggregate, cox_local_stats, CoxLocalStats, TiesMethod};
pub use summary::{cox_summary, SummaryRow, SummaryTable};

use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoxError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid survival data: {0}")]
    InvalidData(String),
    #[error("dataset has no events")]
    NoEvents,
    #[error("risk score overflowed for subject {subject}")]
    Overflow { subject: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
