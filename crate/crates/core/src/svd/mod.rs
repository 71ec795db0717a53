//! Rank-k SVD of a row-partitioned matrix.
//!
//! The dense routines run on one machine; the distributed half splits the
//! alternating power iteration between a master, which only sees p-vectors
//! and scalars, and sites holding the row blocks.

mod dense;
mod distributed;


pub use dense::{svd_oracle, svd_rank1_dense, Rank1};
pub use distributed::{
    master_run_svd, SvdFederation, SvdIterationState, SvdOptions, SvdRunError, SvdSlaveState,
};

use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, NumericsError, Vector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SvdError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid rank {k}: must be between 1 and {max}")]
    InvalidRank { k: usize, max: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    /// Right singular vectors as columns, `p × k`.
    pub v: Matrix,
    pub d: Vec<f64>,
    pub iterations_per_component: Vec<usize>,
    pub converged: Vec<bool>,
}

impl SvdResult {
    pub fn k(&self) -> usize {
        self.d.len()
    }

    /// Largest `|VᵀV − I|` in Frobenius norm.
    pub fn orthogonality_error(&self) -> f64 {
        let gram = self.v.transpose().matmul(&self.v).expect("conformant by construction");
        gram.sub(&Matrix::identity(self.k())).expect("square").frobenius()
    }
}

/// `min_s ‖s·a − b‖_∞` over `s ∈ {−1, +1}`.
pub fn sign_aligned_distance(a: &Vector, b: &Vector) -> f64 {
    let plus = a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let minus = a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x + y).abs()));
    plus.min(minus)
}
