use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// `cos(theta)` fell below the singularity guard in `psi_dot = r / cos(theta)`.
    #[error("pitch singularity: |cos(theta)| = {cos_theta:e} at theta = {theta}")]
    Singularity { theta: f64, cos_theta: f64 },

    #[error("rollout diverged at step {step}: |z| = {magnitude:e}")]
    Diverged { step: usize, magnitude: f64 },

    #[error("integration failed in batch {batch}: {source}")]
    Batch {
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("SVD failed during spectral projection of layer {layer}: {reason}")]
    Svd { layer: usize, reason: String },

    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Usage/config errors map to exit code 2, everything else to 1.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config { .. })
            || matches!(self, Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}
