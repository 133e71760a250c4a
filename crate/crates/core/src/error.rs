use std::path::PathBuf;

use crate::dsl::ParseError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed interchange document. `context` carries the field path and
    /// line/column reported by the decoder.
    #[error("{path}: {context}")]
    Format { path: String, context: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("model must contain at least one parameterized layer")]
    NoParameterizedLayers,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid bit-width {0} (must be >= 2)")]
    InvalidBits(u32),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("layer index {index} out of range 1..={layers}")]
    LayerIndex { index: usize, layers: usize },

    #[error(transparent)]
    Dsl(#[from] ParseError),

    #[error("infeasible target compression {target}: all-minimum assignment reaches only {achievable}")]
    Infeasible { target: f64, achievable: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("endpoint failure: {0}")]
    Endpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
