use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RhaError>;

#[derive(Debug, Error)]
pub enum RhaError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical failure at outer iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("division by zero: {0}")]
    Division(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RhaError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        RhaError::Shape { op, left, right }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        RhaError::Parameter(message.into())
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        RhaError::Format {
            offset,
            message: message.into(),
        }
    }
}
