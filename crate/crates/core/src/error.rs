//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line count mismatch: {path} has {found} lines, expected {expected}")]
    LineCountMismatch {
        path: String,
        found: usize,
        expected: usize,
    },
    #[error("empty file: {0}")]
    EmptyFile(String),
    #[error("insufficient data: requested {requested}, available {available}")]
    InsufficientData { requested: usize, available: usize },
    #[error("invalid id {id} for vocabulary of size {vocab_size}")]
    InvalidId { id: usize, vocab_size: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("empty class: style {0} contributed no sentences")]
    EmptyClass(String),
    #[error("row {row} has {defined} defined entries, need at least 2")]
    RowTooSmall { row: usize, defined: usize },
    #[error("k={k} too large: at most {max} neighbors available")]
    KTooLarge { k: usize, max: usize },
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("checkpoint digest mismatch for {name}: expected {expected}, found {found}")]
    DigestMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("length mismatch: {hyps} hypotheses vs {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("empty reference at index {0}")]
    EmptyReference(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bad format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag for the error record the CLI emits.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LineCountMismatch { .. } => "LineCountMismatch",
            Error::EmptyFile(_) => "EmptyFile",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::InvalidId { .. } => "InvalidId",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::NonScalarLoss { .. } => "NonScalarLoss",
            Error::EmptyTrainingSet => "EmptyTrainingSet",
            Error::EmptyClass(_) => "EmptyClass",
            Error::RowTooSmall { .. } => "RowTooSmall",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::VocabMismatch(_) => "VocabMismatch",
            Error::DigestMismatch { .. } => "DigestMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyReference(_) => "EmptyReference",
            Error::Config(_) => "Config",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}
