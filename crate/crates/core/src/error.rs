use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trial (class {class_id}, trial {trial_id}) has {len} timesteps, fewer than window {window}")]
    TrialTooShort {
        class_id: usize,
        trial_id: usize,
        len: usize,
        window: usize,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("class {class_id} too small to generate: {count} sample(s), need at least 2")]
    ClassTooSmall { class_id: usize, count: usize },

    #[error("mixed class labels: expected class {expected}, found {found}")]
    MixedClasses { expected: usize, found: usize },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("task {task}: {source}")]
    Task {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{strategy} repetition {repetition}: {source}")]
    Run {
        strategy: String,
        repetition: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_task(self, task: usize) -> Self {
        Error::Task {
            task,
            source: Box::new(self),
        }
    }
}
