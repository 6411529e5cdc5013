use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data source not found: {}", .0.display())]
    MissingSource(PathBuf),

    #[error("insufficient data in {domain}: {detail}")]
    Shortfall { domain: String, detail: String },

    #[error("unknown task label {0}")]
    UnknownTask(u32),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("sample ids differ between logs: {0}")]
    SampleMismatch(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing prerequisite runs: {}", .0.join(", "))]
    MissingRuns(Vec<String>),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("image decode failed for {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { what, detail: detail.into() }
    }
}
