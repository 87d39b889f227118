//! Qubit state transfer through fully connected XY spin networks whose
//! internal couplings carry Gaussian white noise.
//!
//! Four independent routes compute the input-to-output channel:
//! exact unitary propagation ([`propagator`]), the noise-averaged master
//! equation ([`lindblad`]), Monte Carlo noise trajectories ([`stochastic`])
//! and first-order weak-noise theory ([`perturbation`]). [`analytics`]
//! collects closed forms and cross-checks them against the engines;
//! [`harness`] drives parameter scans and writes CSV/JSON.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod error;
pub mod harness;
pub mod lindblad;
pub mod network;
pub mod perturbation;
pub mod propagator;
pub mod quad;
pub mod stochastic;

#[cfg(test)]
mod properties;

pub use error::{Error, Result};
