use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("encoding error: {field} = {value} out of range (< {bound} required)")]
    Encoding {
        field: &'static str,
        value: usize,
        bound: usize,
    },

    #[error("instance {id}: {}", .diagnostics.join("; "))]
    Validation { id: String, diagnostics: Vec<String> },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("index {index} out of range for length {len} in {op}")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("choice {choice} has no context score but the provider is from_file")]
    MissingScore { choice: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems, 1 for
    /// everything the data or environment caused.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Generation(_) => 2,
            _ => 1,
        }
    }
}
