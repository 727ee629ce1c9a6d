use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {content:?}")]
    Parse { line: usize, content: String },

    #[error("trace contains no accesses")]
    EmptyTrace,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("solver did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("relative error undefined for a zero reference value; use the absolute error")]
    ZeroReference,

    #[error("cache format version {found} does not match {expected}")]
    CacheVersion { found: u32, expected: u32 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
