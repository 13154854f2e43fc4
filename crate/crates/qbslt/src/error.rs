use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the whole pipeline. Variants are grouped by the
/// operator-facing failure class: config, data, or numeric.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    /// Contract violation that is not a shape/axis problem: non-scalar loss,
    /// zero-norm row, empty sequence, and similar.
    #[error("{0}")]
    Invalid(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    VocabRange { id: usize, vocab: usize },

    #[error("{path}: record {record}, field `{field}`: {msg}")]
    Corpus {
        path: String,
        record: usize,
        field: &'static str,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss {value} at step {step}")]
    NonFinite { step: usize, value: f64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
