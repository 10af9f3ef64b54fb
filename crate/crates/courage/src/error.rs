//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CourageError {
    /// Incompatible matrix shapes, naming both operands.
    #[error("{op}: incompatible shapes {lhs_rows}x{lhs_cols} and {rhs_rows}x{rhs_cols}")]
    Dim {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric quantity left the finite range.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API contract was violated (wrong call order, wrong node kind, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input data with file/line context where available.
    #[error("format error in {path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Format {
        path: String,
        line: Option<u64>,
        message: String,
    },

    /// A required input file is missing.
    #[error("missing input file: {0}")]
    MissingInput(String),

    /// Forecast sets disagree on their location/anchor keys.
    #[error("mismatched forecast keys: {0}")]
    KeyMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CourageError {
    pub fn config(msg: impl Into<String>) -> Self {
        CourageError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CourageError::Numeric(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        CourageError::Contract(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CourageError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CourageError>;
