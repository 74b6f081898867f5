//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for an operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Non-finite values or other numeric failures.
    #[error("numeric error in {op}: {msg}")]
    Numeric { op: &'static str, msg: String },

    /// Invalid configuration (bad architecture, unknown kind, bad hyperparameter).
    #[error("configuration error: {0}")]
    Config(String),

    /// A documented precondition between modules was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid runtime input (out-of-range token, state outside the space, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A training loop produced a NaN loss.
    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    /// No candidate proxy met the rank-correlation threshold.
    #[error("proxy calibration failed: no candidate reached correlation {threshold}\n{table}")]
    CalibrationFailed { threshold: f64, table: String },

    /// Fewer unexplored states than a search episode requires.
    #[error("search space exhausted: needed {needed} unexplored states, {available} left")]
    SearchExhausted { needed: usize, available: usize },

    /// Text failed to parse; position is a byte offset into the input.
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    /// A prerequisite artifact (latency table, log directory) is missing.
    #[error("missing prerequisite: {0}")]
    MissingArtifact(String),

    /// Resuming a run whose persisted config differs from the requested one.
    #[error("config mismatch on resume:\n{diff}")]
    ConfigMismatch { diff: String },

    /// Benchmarking refused while candidate evaluations are in flight.
    #[error("latency measurement refused: {active} candidate evaluations active")]
    BenchmarkBusy { active: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
