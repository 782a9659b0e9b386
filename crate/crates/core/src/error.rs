use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("layer {index}: {reason}")]
    LayerBuild { index: usize, reason: String },

    #[error("layer index {index} out of range (network has {count} layers)")]
    LayerIndex { index: usize, count: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("feature {feature}: {source}")]
    Feature {
        feature: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("objective became non-finite at iteration {iteration}")]
    Diverged {
        iteration: usize,
        /// Last iterate with a finite objective.
        last_finite: Box<crate::tensor::Tensor>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
