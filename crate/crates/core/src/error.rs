use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented invariant. `key` names the offending field.
    #[error("invalid `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("point ({x}, {y}) lies outside the {lx} x {ly} domain")]
    DomainViolation { x: f64, y: f64, lx: f64, ly: f64 },

    #[error("grid index ({row}, {col}) out of range for K = {k}")]
    Index { row: usize, col: usize, k: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("linear solve failed: {message} (residual {residual:.3e}, condition estimate {condition:.3e})")]
    Solve {
        message: String,
        residual: f64,
        condition: f64,
    },

    #[error("system of size {size} exceeds the dense limit {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("no candidate placement yields a finite condition number")]
    NoIdentifiablePlacement,

    #[error("reconstruction failed: {0}")]
    Reconstruction(String),

    #[error("training diverged at iteration {iteration}: {message}")]
    Training { iteration: usize, message: String },

    #[error("optimizer received non-finite gradient at parameter {index}")]
    Optimizer { index: usize },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
