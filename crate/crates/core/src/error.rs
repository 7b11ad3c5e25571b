use thiserror::Error;

/// Errors raised by solvers, analyses and the scenario harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small for stencil: axis {axis} has {points} points, need at least {needed}")]
    Stencil {
        axis: usize,
        points: usize,
        needed: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("config line {line} column {column}, at `{path}`: {message}")]
    ConfigParse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },
    #[error("solver did not converge: {what} (residual {residual:.3e})")]
    Convergence { what: String, residual: f64 },
    #[error("preparation error: {0}")]
    Preparation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
