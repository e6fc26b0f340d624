use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alphabet size must be at least 2, got {0}")]
    InvalidAlphabet(usize),

    #[error("symbol {symbol} outside 1..={d}")]
    SymbolOutOfRange { symbol: usize, d: u8 },

    #[error("depth must be at least 1")]
    ZeroDepth,

    #[error("index {index} outside 1..={size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("points {0} and {1} are not equivalent under the relation")]
    NotEquivalent(String, String),

    #[error("depth incompatibility: {0}")]
    DepthIncompatible(String),

    #[error("operation requires a separable cocycle")]
    NotSeparable,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("power iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
