//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("tensors belong to different graphs")]
    GraphMismatch,

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("division floor violated: denominator {value} < {floor}")]
    DivFloor { value: f64, floor: f64 },

    #[error("batch norm eval requested before running statistics were initialized")]
    UninitializedStats,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate prediction: {0}")]
    Degenerate(String),

    #[error("crop of {crop} px cannot fit the valid region; source must be at least {min_size} px")]
    CropTooSmall { crop: usize, min_size: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("png error: {0}")]
    Png(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for shape mismatches.
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
