use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid edit script: {0}")]
    InvalidScript(String),

    #[error("failed to parse edit script at line {line}: {msg}")]
    ScriptParse { line: usize, msg: String },

    #[error("tokenizer error: {0}")]
    Tokenizer(String),

    #[error("unknown token id {0}")]
    UnknownId(u32),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("store format error in {path}: {msg}")]
    Store { path: PathBuf, msg: String },

    #[error("version control error: {0}")]
    Vcs(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("input of {len} tokens exceeds max_len {max}")]
    TooLong { len: usize, max: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
