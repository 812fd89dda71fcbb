use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("integration diverged: exceeded {max_steps} steps at t = {t}")]
    Divergence { t: f64, max_steps: usize },

    #[error("numerical instability at t = {t}: {what}")]
    Instability { t: f64, what: String },

    #[error(
        "matrix not positive definite (n = {n}, jitter reached {jitter:e}, min diagonal {min_diag:e}, max diagonal {max_diag:e})"
    )]
    NotPositiveDefinite {
        n: usize,
        jitter: f64,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("environment rollout failed at t = {t}: {reason}")]
    Environment { t: f64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
