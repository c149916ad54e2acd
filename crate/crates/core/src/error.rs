use std::path::PathBuf;

use daug_nn::NnError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{stage} training diverged: {detail}")]
    Training { stage: &'static str, detail: String },
    #[error("non-finite guidance gradient at t={t} for target super-class {target}")]
    Guidance { t: usize, target: usize },
    #[error("stale heatmap cache at {path}: {detail}")]
    StaleCache { path: PathBuf, detail: String },
    #[error("class prompt embeddings are stale (encoded at encoder version {encoded:?}, encoder is at {current})")]
    StalePrompts { encoded: Option<u64>, current: u64 },
    #[error("missing prerequisite `{stage}`: run `daug {command}` first")]
    Dependency { stage: String, command: String },
    #[error("artifact conflict at {path}: {detail} (rerun with --force to overwrite)")]
    Conflict { path: PathBuf, detail: String },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("malformed artifact {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}

impl Error {
    /// Process exit status for the CLI: 2 config/argument, 3 missing
    /// prerequisite, 4 conflict or stale cache, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Argument(_) => 2,
            Error::Dependency { .. } => 3,
            Error::Conflict { .. } | Error::StaleCache { .. } => 4,
            _ => 1,
        }
    }
}
