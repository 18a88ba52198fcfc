use thiserror::Error;

/// Errors produced by the operator algebra, model loading and the oracle.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("subsystem index {index} out of range ({count} subsystems)")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("subsystem index {0} listed more than once")]
    DuplicateIndex(usize),

    #[error("operator is not Hermitian: defect {defect:e} exceeds {tolerance:e}")]
    NotHermitian { defect: f64, tolerance: f64 },

    #[error("operation requires a {expected} model, found {found}")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid model at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("resource guard exceeded: {0}")]
    ResourceGuard(String),

    #[error("lattice sum diverges: z = {z} <= D = {dim}")]
    Divergent { dim: u32, z: f64 },

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
