//! File formats, experiment harness and command-line front end for
//! [`diffuco_core`].
//!
//! - [`dataset`]: JSON-lines graph datasets.
//! - [`checkpoint`]: versioned JSON model checkpoints.
//! - [`config`]: training configuration files.
//! - [`bench`]: evaluation of models and reference solvers, CSV/JSON reports.
//! - [`cli`]: the `diffuco` command.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod parallel;

pub use error::{Error, Result};
