//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// IO failure, tagged with the path involved.
    Io { path: String, source: std::io::Error },
    /// Malformed file content; `context` is a document path such as
    /// `gaussians[3].density_logit`.
    Format { context: String, message: String },
    /// Domain invariant violated while constructing a value.
    Invalid(String),
    /// A NaN or infinity appeared where finite numbers are required.
    NonFinite(String),
    /// Bad CLI or training configuration.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{path}: {source}"),
            Error::Format { context, message } => write!(f, "{context}: {message}"),
            Error::Invalid(msg) => write!(f, "invalid value: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(context: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Format {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
