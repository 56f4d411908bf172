use std::path::PathBuf;

/// Unified error type for the whole crate.
///
/// `NonFiniteLoss` is kept as its own variant because the CLI maps it to a
/// dedicated exit code (numeric abort) distinct from validation failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{context}: {detail}")]
    Invalid { context: &'static str, detail: String },

    #[error("record '{id}': {detail}")]
    Record { id: String, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("parameter '{0}' has no gradient (was backward run and accumulated?)")]
    MissingGrad(String),

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn invalid(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid { context, detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
