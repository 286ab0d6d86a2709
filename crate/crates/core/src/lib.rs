//! Discrete diffusion models for unsupervised combinatorial optimization.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that is pure
//! computation: graph generators, multilinear energy functions, the mean-field
//! diffusion machinery, a message-passing network with hand-written reverse
//! mode, the joint variational training objective, derandomized decoding,
//! reference solvers and evaluation metrics. File formats, timing and the
//! command-line front end live in the `diffuco` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod decode;
pub mod diffusion;
pub mod energy;
mod error;
pub mod exact;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod training;

pub use error::{Error, Result};

/// Probabilities are clamped into `[EPS, 1 - EPS]` before any logarithm.
pub const EPS: f64 = 1e-7;
