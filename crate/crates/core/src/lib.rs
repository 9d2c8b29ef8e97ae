//! Failure analysis for event-sequence telemetry.
//!
//! The crate covers the full loop of a sequence-labelling study:
//!
//! * [`gen`] builds synthetic session datasets whose failure labels follow a
//!   known ordered-pattern/blocker rule, so that attribution quality can be
//!   scored against ground truth.
//! * [`model`] and [`train`] implement an LSTM sequence classifier (standard
//!   or bi-directional) from scratch, trained with backpropagation through
//!   time.
//! * [`tune`] searches the hyper-parameter space with a Gaussian-process
//!   surrogate and the expected-improvement acquisition function.
//! * [`extract`] perturbs individual sessions against a trained model to
//!   attribute the failure probability to contributor and blocker events.
//! * [`mine`] provides a support/confidence/lift sequential-rule baseline.
//! * [`io`] reads and writes the plain-text dataset and model formats.
//!
//! Everything is deterministic: all randomness flows through the explicit
//! [`rng::Rng`] generator, and repeated runs with the same seeds produce
//! byte-identical artifacts regardless of thread count.

pub mod data;
pub mod extract;
pub mod gen;
pub mod io;
pub mod linalg;
pub mod mine;
pub mod model;
pub mod rng;
pub mod train;
pub mod tune;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("unknown event {0:?}")]
    UnknownEvent(String),
    #[error("event id {id} outside vocabulary of size {vocab_size}")]
    EventOutOfRange { id: u32, vocab_size: usize },
    #[error("non-finite {what} in epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("matrix is not positive definite (jitter up to {max_jitter:e} did not help)")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unsupported format version {found:?} (expected {expected:?})")]
    FormatVersion { found: String, expected: String },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
