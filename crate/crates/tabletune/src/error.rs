//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Corpus ingestion failed: empty input, undecodable bytes, missing files.
    #[error("corpus error: {0}")]
    Corpus(String),

    /// A task was instantiated over a table with no rows or no columns.
    #[error("empty table: {0}")]
    EmptyTable(String),

    /// A completion variant did not match the task kind it was paired with.
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),

    /// A raw model answer could not be parsed into a typed completion.
    /// Signals "discard candidate", never a pipeline crash.
    #[error("unparseable completion: {0}")]
    UnparseableCompletion(String),

    /// The task kind does not support the requested operation.
    #[error("unsupported task kind: {0}")]
    UnsupportedKind(String),

    /// HTTP transport or status failure after bounded retries.
    #[error("transport error: {0}")]
    Transport(String),

    /// A scripted model had no answer for a prompt fingerprint. This is a
    /// test-setup bug and fails fast.
    #[error("scripted model miss: {0}")]
    ScriptMiss(String),

    /// Fine-tune submission over an empty training file.
    #[error("empty training set: {0}")]
    EmptyTrainingSet(String),

    /// A code snippet referenced a language with no registered executor.
    #[error("unregistered language: {0}")]
    Registry(String),

    /// Bad configuration (CLI flags, config file, or programmatic).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for config/corpus problems,
    /// 2 for backend failures, per the documented contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Transport(_) | Error::ScriptMiss(_) => 2,
            _ => 1,
        }
    }
}
