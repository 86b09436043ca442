use thiserror::Error;

/// Errors surfaced by grid construction, model fitting, and file handling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid event list: {0}")]
    InvalidEvents(String),

    #[error("invalid exposure: {0}")]
    InvalidExposure(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("file does not match: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
