//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the feature pipeline, network, training loop and tooling.
#[derive(Debug, Error)]
pub enum CcatError {
    /// Malformed input file (WAV header, manifest row, ...).
    #[error("parse error: {0}")]
    Parse(String),

    /// Recognized container but unsupported encoding.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Signal shorter than one analysis window.
    #[error("signal too short: {0}")]
    TooShort(String),

    /// Tensor shapes incompatible with the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid model/feature/training configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Every attention key is masked for some query.
    #[error("all attention keys masked")]
    AllMasked,

    /// Input with zero valid frames.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Checkpoint container magic/version mismatch.
    #[error("format error: {0}")]
    Format(String),

    /// Checkpoint contents inconsistent or truncated.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// MOS label outside [1, 5].
    #[error("label error: {0}")]
    Label(String),

    /// Training batch with no utterances.
    #[error("empty batch")]
    EmptyBatch,

    /// Non-finite loss or parameters during training.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Metric undefined for the given input (e.g. zero variance).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Not enough points for the requested fit or split.
    #[error("too few points: {0}")]
    TooFewPoints(String),

    /// Ensemble with no member models.
    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CcatError>;
