//! Distillation-guided architecture search for small transformer encoders.
//!
//! The crate searches a discrete space of encoder architectures for students
//! that distil well from a fixed teacher under a latency budget:
//!
//! - [`tensor`] / [`tape`] / [`gradcheck`]: dense `f64` tensors with
//!   reverse-mode differentiation and a finite-difference verifier.
//! - [`arch`] / [`space`]: architecture states, the candidate search space,
//!   encoding and sampling.
//! - [`model`]: a configurable post-layer-norm encoder exposing per-layer
//!   hidden states and Q/K/V for distillation.
//! - [`mapping`] / [`distill`] / [`optim`]: layer-mapping strategies, the
//!   hidden-state and relation distillation objectives, and training loops
//!   (full runs, reduced proxy runs, proxy calibration).
//! - [`corpus`]: deterministic ingestion, batching and proxy subsets.
//! - [`latency`]: single-inference latency measurement and the persistent
//!   lookup table consumed by the reward.
//! - [`controller`]: the recurrent reward predictor retrained each episode.
//! - [`engine`]: the episode loop, reward, exploration schedule, logging,
//!   random-sampling baseline and surrogate landscapes.
//! - [`config`]: the JSON run configuration shared by the CLI.

pub mod arch;
pub mod checkpoint;
pub mod config;
pub mod controller;
pub mod corpus;
pub mod distill;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod latency;
pub mod mapping;
pub mod model;
pub mod optim;
pub mod seeds;
pub mod space;
pub mod tape;
pub mod tensor;

pub use arch::{Activation, ArchState};
pub use error::{Error, Result};
pub use tensor::Tensor;
