use thiserror::Error;

/// Errors produced by the clustering, scale, and imaging routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate scale: all distances are zero")]
    DegenerateScale,

    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("rejection sampling failed after {0} consecutive draws")]
    RejectionSamplingFailed(usize),

    #[error("csv parse error at row {row}, column {col}: {reason}")]
    CsvParse {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("raster error: {0}")]
    Raster(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
