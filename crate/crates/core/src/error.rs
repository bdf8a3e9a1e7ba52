use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at step {step}{}", task.map(|t| format!(" of task {t}")).unwrap_or_default())]
    Divergence { step: usize, task: Option<usize> },

    #[error("ensemble error: {0}")]
    Ensemble(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("ingestion error at byte offset {offset}: {message}")]
    Ingest { offset: u64, message: String },

    #[error("bookkeeping error: {0}")]
    Bookkeeping(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Attach a task index to a divergence error raised deeper in the stack.
    pub fn in_task(self, task: usize) -> Self {
        match self {
            Error::Divergence { step, .. } => Error::Divergence {
                step,
                task: Some(task),
            },
            other => other,
        }
    }
}
