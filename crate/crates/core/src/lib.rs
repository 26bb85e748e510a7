//! Quantum homodyne tomography.
//!
//! Simulates quadrature measurements of single-mode states and reconstructs the
//! density matrix and Wigner function with pattern-function projection and sieve
//! maximum-likelihood (EM) estimators.

// Validation reads `!(x > 0.0)` so that NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bench;
pub mod error;
pub mod homodyne;
pub mod pfp;
pub mod sml;
pub mod states;
pub mod wigner;

pub use error::{Error, Result};
