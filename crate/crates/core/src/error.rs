use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor had the wrong shape for the requested operation.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A layer, network or run configuration is internally inconsistent.
    #[error("config: {0}")]
    Config(String),

    /// User-supplied input (CLI flag, config file, dataset) is invalid.
    #[error("{0}")]
    Usage(String),

    /// A numerical check failed: non-finite values, diverged training,
    /// or a gradient audit out of tolerance.
    #[error("numerical: {0}")]
    Numerical(String),

    /// A checkpoint or cache file is malformed or does not match the model.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
