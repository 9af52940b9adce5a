use thiserror::Error;

/// Errors surfaced at crate boundaries (file IO, malformed inputs, config).
///
/// Shape and programming errors inside the numeric core panic instead; they
/// indicate bugs, not bad user input.
#[derive(Debug, Error)]
pub enum TasdError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset error at {path}:{line}: {msg}")]
    Dataset { path: String, line: usize, msg: String },

    #[error("vocab error: {0}")]
    Vocab(String),

    #[error("table error: {0}")]
    Table(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("metrics error: {0}")]
    Metrics(String),
}

impl TasdError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        TasdError::Io { path: path.into(), source }
    }

    pub fn dataset(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        TasdError::Dataset { path: path.into(), line, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, TasdError>;
