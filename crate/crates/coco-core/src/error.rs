//! Crate-wide error type with stable machine-readable categories.

use std::path::PathBuf;
use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file contents (bad magic, truncated header, unparsable field).
    #[error("format error: {0}")]
    Format(String),

    /// Structurally valid inputs that disagree with each other (dimension or
    /// label mismatches, out-of-range ids).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Non-finite activation value; reports the first offending entry.
    #[error("data error: non-finite activation at neuron {neuron}, sample {sample}")]
    NonFinite { neuron: usize, sample: usize },

    /// An operation required predicted classes but the dataset carries none.
    #[error("missing predictions: {0}")]
    MissingPredictions(String),

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// No neuron survived activation filtering for the tagged slice.
    #[error("no active neurons in slice (class {class}, domain {domain})")]
    EmptyActiveSet { class: u16, domain: u16 },

    /// Every slice of the dataset was empty or inactive.
    #[error("summarization failed: {0}")]
    SummarizationFailed(String),

    /// No anchor in the batch has a same-class partner.
    #[error("no positive pair in batch")]
    NoPositives,

    /// Concept-level operation invoked with an empty cluster set.
    #[error("no concept clusters: {0}")]
    NoConcepts(String),

    /// Pairwise metric invoked with fewer than two points.
    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    /// Training loss became non-finite.
    #[error("training diverged at step {step}: {reason}")]
    TrainingDiverged { step: u64, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable category slug, used by the CLI's machine-readable error object.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Format(_) => "format",
            Error::Consistency(_) => "consistency",
            Error::NonFinite { .. } => "data",
            Error::MissingPredictions(_) => "missing-predictions",
            Error::EmptyInput(_) => "empty-input",
            Error::EmptyActiveSet { .. } => "empty-active-set",
            Error::SummarizationFailed(_) => "summarization-failed",
            Error::NoPositives => "no-positives",
            Error::NoConcepts(_) => "no-concepts",
            Error::InsufficientPoints(_) => "insufficient-points",
            Error::TrainingDiverged { .. } => "training-diverged",
            Error::Io { .. } => "io",
        }
    }

    /// Wrap an I/O failure with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
