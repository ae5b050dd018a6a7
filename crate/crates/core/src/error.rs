use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed NPY data: {0}")]
    Format(String),
    #[error("unsupported array layout: {0}")]
    UnsupportedLayout(String),
    #[error("invalid tensor data: {0}")]
    Data(String),
    #[error("resolution mismatch: {0}")]
    Resolution(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("support mask has no usable foreground pixel")]
    EmptySupport,
    #[error("need at least 2 background vectors, got {0}")]
    InsufficientBackground(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible synthetic spec: {0}")]
    Spec(String),
    #[error("segmenter backend error: {0}")]
    Backend(String),
    #[error("invalid segment request: {0}")]
    Input(String),
    #[error("refinement pass {pass} failed: {source}")]
    Refine {
        pass: usize,
        #[source]
        source: Box<Error>,
    },
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name used in reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Format(_) => "FormatError",
            Error::UnsupportedLayout(_) => "UnsupportedLayout",
            Error::Data(_) => "DataError",
            Error::Resolution(_) => "ResolutionError",
            Error::Shape(_) => "ShapeError",
            Error::EmptySupport => "EmptySupportError",
            Error::InsufficientBackground(_) => "InsufficientBackgroundError",
            Error::Config(_) => "ConfigError",
            Error::Spec(_) => "SpecError",
            Error::Backend(_) => "BackendError",
            Error::Input(_) => "InputError",
            Error::Refine { source, .. } => source.kind(),
            Error::Io { .. } => "IoError",
            Error::Json { .. } => "JsonError",
        }
    }
}
