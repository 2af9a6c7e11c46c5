use nalgebra::DMatrix;
use thiserror::Error;

/// Errors surfaced by ingestion, model evaluation and the particle smoother.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{context}: matrix is not positive definite\n{matrix}")]
    NotPositiveDefinite { context: String, matrix: DMatrix<f64> },

    #[error("degenerate weights: {0}")]
    Degenerate(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
