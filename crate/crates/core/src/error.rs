//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {deviation:.3e})")]
    Asymmetric { deviation: f64 },

    #[error("numerically rank-deficient input: |R_{index},{index}| = {pivot:.3e} below threshold {threshold:.3e}")]
    DegenerateRank {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("isolated vertex at index {index}: degree {degree:.3e} below threshold; consider a larger sigma")]
    IsolatedVertex { index: usize, degree: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("all sampled points identical: median pairwise distance is zero")]
    ZeroDistance,

    #[error("fewer than {k} distinct points: cannot place {k} centroids")]
    DuplicateCentroids { k: usize },

    #[error("optimizer step failed: {reason}; try a smaller master step length")]
    StepFailure { reason: String },

    #[error(
        "exact solver refused: n = {n} exceeds guard {guard} (dense eigendecomposition is O(n^3))"
    )]
    GuardExceeded { n: usize, guard: usize },

    #[error("landmark block numerically rank-deficient (|eigenvalue| {value:.3e} below {threshold:.3e}); try more landmarks or another seed")]
    DegenerateLandmark { value: f64, threshold: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degree cache corrupt: {0}")]
    CorruptCache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
