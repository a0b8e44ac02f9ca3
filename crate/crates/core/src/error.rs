use std::path::PathBuf;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Backend,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("backend failure: {0}")]
    Backend(String),

    #[error("feature vector has zero norm")]
    ZeroFeature,

    #[error("operation not supported by this classifier: {0}")]
    Unsupported(&'static str),

    #[error("correlation undefined: at least one input has zero variance")]
    DegenerateCorrelation,

    #[error("{context}: {source}")]
    Indexed {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shape(_)
            | Error::Validation(_)
            | Error::ZeroFeature
            | Error::Unsupported(_)
            | Error::DegenerateCorrelation => ErrorKind::Validation,
            Error::Backend(_) => ErrorKind::Backend,
            Error::Io { .. } | Error::Decode { .. } => ErrorKind::Io,
            Error::Indexed { source, .. } => source.kind(),
        }
    }

    /// Wraps the error with a location such as a mask index or curve step.
    pub fn at(self, context: impl Into<String>) -> Error {
        Error::Indexed {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any `Indexed` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Indexed { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
