use thiserror::Error;

/// Errors produced by the tracking core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FcotError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("position ({x}, {y}) outside {width}x{height} grid")]
    OutOfGrid {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    /// The gradient vanished; the iterate is already a stationary point.
    #[error("zero gradient")]
    ZeroGradient,

    #[error("singular normal equations")]
    Singular,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("tracker is not initialized")]
    Uninitialized,

    #[error("length mismatch: {predictions} predictions vs {ground_truth} ground-truth boxes")]
    LengthMismatch {
        predictions: usize,
        ground_truth: usize,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for FcotError {
    fn from(e: std::io::Error) -> Self {
        FcotError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FcotError>;
