use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mosaic requires even dimensions, got {width}x{height}")]
    OddDimensions { width: usize, height: usize },
    #[error("degenerate system: {0}")]
    DegenerateSystem(String),
    #[error("insufficient valid pixels: need {required}, have {actual}")]
    InsufficientValidPixels { required: usize, actual: usize },
    #[error("optimizer diverged after {0} consecutive rejected steps")]
    Diverged(usize),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("bucket [{lo}, {hi}) contains no ground-truth pixels")]
    EmptyBucket { lo: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
