use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("non-finite gradient in layer {layer}")]
    Numeric { layer: usize },

    #[error("invalid state: {0}")]
    State(String),

    #[error("malformed input at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("incompatible file: {0}")]
    Incompatible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
