//! Error type shared by every module of the engine.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape, length or dimension mismatch in an argument.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An operation was called outside its domain (e.g. reducing an exhausted budget).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The model architecture does not support the requested operation.
    #[error("architecture mismatch: {0}")]
    Architecture(String),

    /// A model, space or dataset failed validation. `field` is a dotted path
    /// (`lstm.w_x`) or a `line N` marker.
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("perturbation space too large: more than {cap} members")]
    SpaceTooLarge { cap: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefix the field path of an [`Error::Invalid`] with `outer`.
    pub(crate) fn within(self, outer: &str) -> Self {
        match self {
            Error::Invalid { field, message } => Error::Invalid {
                field: format!("{outer}.{field}"),
                message,
            },
            other => other,
        }
    }
}
