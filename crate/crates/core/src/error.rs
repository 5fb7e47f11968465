use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("incompatible graphs: {0}")]
    IncompatibleGraphs(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown cell type `{label}` (vocabulary: {vocabulary:?})")]
    Vocabulary { label: String, vocabulary: Vec<String> },

    #[error("degenerate freestream: u0 = v0 = 0")]
    DegenerateFreestream,

    #[error("normalizer has not been fitted")]
    NotFitted,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("relative error undefined: target has zero norm")]
    ZeroNormTarget,

    #[error("backward called before forward")]
    NoTape,

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
