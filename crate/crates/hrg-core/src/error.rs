//! Error type shared across the crate.

use thiserror::Error;

/// Errors reported by the hierarchical-model operations.
///
/// Errors arising inside a randomized ensemble carry the seed of the
/// offending realization so it can be reproduced in isolation.
#[derive(Debug, Clone, Error)]
pub enum HrgError {
    #[error("averaging level {level} exceeds volume scale n = {n}")]
    LevelOutOfRange { level: usize, n: usize },

    #[error("vector length {len} does not match volume 2^{n}")]
    LengthMismatch { len: usize, n: usize },

    #[error("input vector contains non-finite entries")]
    NonFiniteInput,

    #[error("dense size {size} exceeds the configured cap {cap}")]
    DenseCapExceeded { size: usize, cap: usize },

    #[error("truncation level m = {m} exceeds volume scale n = {n}")]
    TruncationOutOfRange { m: usize, n: usize },

    #[error("invalid hopping model: {0}")]
    InvalidHopping(String),

    #[error("invalid density model: {0}")]
    InvalidDensity(String),

    #[error("singular input to the harmonic-mean step: v = {v}, w = {w}")]
    SingularPair { v: f64, w: f64 },

    #[error("singular potential pair at site pair {pair} (seed {seed})")]
    SingularPotentialPair { pair: usize, seed: u64 },

    #[error("{count} of {total} Monte Carlo pairs were singular (> 0.1% budget)")]
    TooManySingularPairs { count: usize, total: usize },

    #[error("grid flow mass deficit {deficit:e} exceeds 1e-3: {detail}")]
    MassDeficit { deficit: f64, detail: String },

    #[error("eigensolver failed to converge (seed {seed})")]
    EigensolverFailure { seed: u64 },

    #[error("linear solve is numerically singular for {what} (seed {seed})")]
    SingularSolve { what: String, seed: u64 },

    #[error("non-finite value encountered in {0}")]
    NonFiniteResult(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("quadrature failed to converge for gamma = {gamma}")]
    QuadratureFailure { gamma: String },
}
