use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("dataset index error for `{file}`: {reason}")]
    Index { file: String, reason: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("schedule error: iteration {t} outside [0, {total}]")]
    Schedule { t: u64, total: u64 },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (this build reads major version {supported})")]
    Version { found: u32, supported: u32 },

    #[error(
        "non-finite value in `{tensor}` at iteration {iteration} (seed {seed}, lr {lr:e})"
    )]
    NonFinite {
        tensor: String,
        iteration: u64,
        seed: u64,
        lr: f64,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
