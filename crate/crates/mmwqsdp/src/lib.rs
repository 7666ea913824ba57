//! Desk-scale testbed for trace-constrained SDP feasibility built around
//! the matrix multiplicative weights update.
//!
//! The pieces, bottom up:
//!
//! - [`linalg`]: validated Hermitian and density-matrix types with exact
//!   spectral kernels (eigendecomposition, `exp(-H)`, Gibbs weights,
//!   trace forms, a unitary eigensolver).
//! - [`mmw`]: the multiplicative-weights feasibility loop plus a regret
//!   auditor for the update's guarantee.
//! - [`oracle`]: violated-constraint search in four backends: exact scan,
//!   statistical tests in two input models, and a projector-OR search.
//! - [`orsim`]: dense state-vector simulation of the projector-OR test
//!   (reflection iterate, eigenphase sampling, acceptance gap).
//! - [`gibbs`]: low-rank Gibbs machinery: shifted-grid eigenvalue
//!   rounding, partition-function and kernel-dimension estimators,
//!   support/kernel samplers, and assembled Gibbs states.
//! - [`learn`]: maximum-entropy state learner that matches measurement
//!   expectations and emits the exponent coefficients.
//! - [`io`], [`gen`], [`report`]: instance files, fixture generators,
//!   and run reports for the command-line front end.
//!
//! All stochastic routines take an explicit seeded [`rng::Rng`] and are
//! bit-reproducible. With the default `parallel` feature Monte-Carlo
//! repetitions fan out over rayon; reductions are chunked so results do
//! not depend on the worker count. `MMWQSDP_THREADS` caps the pool.

pub mod error;
pub mod exec;
pub mod gen;
pub mod gibbs;
pub mod io;
pub mod learn;
pub mod linalg;
pub mod mmw;
pub mod oracle;
pub mod orsim;
pub mod report;
pub mod rng;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use exec::configure_threads_from_env;
