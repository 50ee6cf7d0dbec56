use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("rating {value} is not part of the scale {scale:?}")]
    RatingOutOfScale { value: f64, scale: Vec<f64> },

    #[error("invalid rating scale: {0}")]
    InvalidScale(String),

    #[error("no ratings left after filtering users with fewer than {min_ratings} ratings")]
    EmptyTable { min_ratings: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid rank: {0}")]
    InvalidRank(String),

    #[error("matrix is rank deficient (column {column}, residual norm {norm:e})")]
    RankDeficient { column: usize, norm: f64 },

    #[error("SVD failed after {attempts} attempts: relative residual {residual:e} exceeds {tolerance:e}")]
    SvdBreakdown {
        attempts: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("tensor has no nonzero entries")]
    ZeroTensor,

    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("similarity normaliser is zero: target shares no rated items with any training user")]
    NoNeighbors,

    #[error("{0}")]
    InvalidInput(String),

    #[error("unsupported model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
