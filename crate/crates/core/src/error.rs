use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine, model, and pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{what} = {value} is not divisible by {divisor}")]
    Divisibility {
        what: String,
        value: usize,
        divisor: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid permutation {0:?}")]
    Permutation(Vec<usize>),

    #[error("growth schedule rejected at layer {layer}: {channels} channels not divisible by {groups} groups")]
    Schedule {
        layer: usize,
        channels: usize,
        groups: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("batch norm running statistics are uninitialized; run a training step first")]
    BatchNormUninitialized,

    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("checkpoint integrity failure: {0}")]
    Integrity(String),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{path}: image too small for a {needed}x{needed} patch")]
    ImageTooSmall { path: PathBuf, needed: usize },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for numeric failures (non-finite values), as opposed to
    /// usage or validation errors.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
