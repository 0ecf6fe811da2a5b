use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, strides, or layer configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed data or checkpoint file; `offset` is the byte position at
    /// which the problem was detected.
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: String,
        offset: usize,
        msg: String,
    },

    /// Invalid runtime data (labels out of range and the like).
    #[error("data error: {0}")]
    Data(String),

    /// API misuse (e.g. backward from a non-scalar root).
    #[error("usage error: {0}")]
    Usage(String),

    /// Network-spec text that does not parse.
    #[error("spec error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Training diverged or produced non-finite numbers.
    #[error("numerical failure: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(path: impl AsRef<std::path::Path>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            offset,
            msg: msg.into(),
        }
    }
}
