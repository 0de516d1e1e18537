//! Numerical laboratory for the hierarchical Anderson model.
//!
//! The model is `H_n = Σ_r p_r E_r + V` on the dyadic volume `B_n = {0, …, 2^n − 1}`,
//! where `E_r` averages over blocks of size `2^r` and `V` is an i.i.d. random
//! potential. This crate provides:
//!
//! - [`hierarchy`]: the ultrametric geometry, matrix-free averaging operators,
//!   and the hierarchical Laplacian (fast apply, dense oracle, closed-form spectrum);
//! - [`disorder`]: single-site density models, Cauchy-domination checks, and
//!   reproducible seeded sampling;
//! - [`hamiltonian`]: finite-volume Hamiltonians, dense diagonalization, and
//!   Green-function solves;
//! - [`rgflow`]: the renormalization map `T_p` on single-site densities
//!   (harmonic-mean step, deterministic grid pushforward, Monte Carlo flow,
//!   sup-norm tracking, exact Cauchy flows);
//! - [`renorm`]: the operator-level renormalization (e/f basis change,
//!   Schur-complement recovery, the Green-function recursion, Φ statistics,
//!   fractional moments, decoupling constants);
//! - [`observables`]: eigenfunction correlators, inverse participation ratios,
//!   density of states, rescaled eigenvalue point processes, Poisson tests,
//!   and counting bounds;
//! - [`stats`]: shared statistical helpers (KS tests, fits, accumulators).

pub mod disorder;
pub mod error;
pub mod hamiltonian;
pub mod hierarchy;
pub mod observables;
pub mod renorm;
pub mod rgflow;
pub mod stats;

pub use error::HrgError;

/// Default cap on the linear size of dense matrices (2^12 = 4096 sites).
/// Dense diagonalization beyond this is a resource error; matrix-free
/// application has no such limit.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Crate result type.
pub type Result<T> = std::result::Result<T, HrgError>;
