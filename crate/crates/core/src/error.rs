use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The CLI prints these as a single line, so `Display` output never contains
/// a newline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid-spec: {0}")]
    InvalidSpec(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("wrong-kind: expected {expected} sinogram, got {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("shape: {0}")]
    Shape(String),

    #[error("numerical-failure: {0}")]
    NumericalFailure(String),

    #[error("configuration: {0}")]
    Configuration(String),

    #[error("lookup: unknown tag `{tag}`; valid tags: {}", valid.join(", "))]
    Lookup { tag: String, valid: Vec<String> },

    #[error("index: {0}")]
    Index(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("corrupt-file: {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("incompatible-checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("hdf5: {path}: {reason}")]
    Hdf5 { path: PathBuf, reason: String },

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, the prefix of the `Display` output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid-spec",
            Error::Geometry(_) => "geometry",
            Error::WrongKind { .. } => "wrong-kind",
            Error::Shape(_) => "shape",
            Error::NumericalFailure(_) => "numerical-failure",
            Error::Configuration(_) => "configuration",
            Error::Lookup { .. } => "lookup",
            Error::Index(_) => "index",
            Error::Protocol(_) => "protocol",
            Error::CorruptFile { .. } => "corrupt-file",
            Error::IncompatibleCheckpoint(_) => "incompatible-checkpoint",
            Error::Io { .. } => "io",
            Error::Hdf5 { .. } => "hdf5",
            Error::Usage(_) => "usage",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
