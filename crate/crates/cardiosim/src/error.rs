//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration rejected during validation. `path` is a JSON-pointer
    /// style location of the offending field.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    /// Iterative solver failed to converge. Carries the tail of the residual
    /// history for diagnostics.
    #[error("solver failure in {context}: residual {residual:.3e} after {iterations} iterations (history tail: {history:?})")]
    Solver {
        context: String,
        residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code convention: 2 for configuration problems,
    /// 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Geometry(_) | Error::Format { .. } => 2,
            Error::Solver { .. } | Error::Numerical(_) => 3,
            _ => 1,
        }
    }
}
