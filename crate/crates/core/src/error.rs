use thiserror::Error;

/// Errors produced by the attention kernels, the pattern search and the runtime.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite value in {matrix} at ({row}, {col})")]
    NonFinite {
        matrix: &'static str,
        row: usize,
        col: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("empty attention row {row}")]
    EmptyRow { row: usize },

    #[error("invalid pattern {pattern} for length {n}: {reason}")]
    InvalidPattern {
        pattern: String,
        n: usize,
        reason: String,
    },

    #[error("invalid sparse index: {0}")]
    InvalidIndex(String),

    #[error("sparse kernels require causal inputs")]
    NotCausal,

    #[error("invalid search space: {0}")]
    InvalidSearchSpace(String),

    #[error("sequence length {n} exceeds the dense-evaluation cap {cap}; use windowed selection")]
    DenseCapExceeded { n: usize, cap: usize },

    #[error("invalid calibration window {window} for length {n}")]
    InvalidCalibrationWindow { window: usize, n: usize },

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("context length {requested} exceeds max_context {max}")]
    ContextOverflow { requested: usize, max: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
