//! Deterministic federated learning simulator with pruning-based unlearning.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a tiny dense/conv network core with Adam and a checkpoint format.
//! - [`data`]: synthetic and IDX datasets, client partitioning and poisoning.
//! - [`fl`]: local training, FedAvg and the server round loop.
//! - [`unlearn`]: unlearning mask generation/application, pruning-rate
//!   heuristic, rate limiting and recovery.
//! - [`baselines`]: retraining, natural forgetting and alternative masks.
//! - [`harness`]: experiment configs, scenario timelines, metrics and output.
//!
//! Everything that touches randomness is seeded; two runs of the same
//! configuration produce bit-identical weights regardless of the
//! [`Execution`] mode.

pub mod baselines;
mod count;
pub mod data;
mod error;
mod exec;
pub mod fl;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod unlearn;

pub use error::{Error, ErrorCategory, Result};
pub use exec::Execution;
