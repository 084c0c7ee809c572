use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at layer {layer}: expected {expected}, got {got}")]
    Dimension {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cdf table error: {0}")]
    Table(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps a training failure with the id of the client it came from.
    pub fn for_client(self, client: usize) -> Error {
        match self {
            Error::Training(msg) => Error::Training(format!("client {client}: {msg}")),
            Error::NonFiniteGradient(name) => {
                Error::Training(format!("client {client}: non-finite gradient in `{name}`"))
            }
            other => other,
        }
    }
}
