use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("camera path leaves the volume at sample {index}: position {position:?}")]
    Path { index: usize, position: [f64; 3] },

    #[error("shape mismatch in {dim}: expected {expected}, got {actual}")]
    Shape {
        dim: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid architecture: {0}")]
    Spec(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("unknown record ids in exclusion manifest: {}", .0.join(", "))]
    UnknownRecords(Vec<String>),

    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("value outside [0, 1]: {0}")]
    Domain(f64),

    #[error("non-finite loss term {term} at step {step}")]
    NonFinite { term: &'static str, step: u64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Short machine-readable category used by command-line error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Load { .. } => "load",
            Error::Param(_) => "param",
            Error::Path { .. } => "path",
            Error::Shape { .. } => "shape",
            Error::Spec(_) => "spec",
            Error::Dataset(_) => "dataset",
            Error::UnknownRecords(_) => "validation",
            Error::UnknownKeys(_) => "config",
            Error::Domain(_) => "domain",
            Error::NonFinite { .. } => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Image { .. } => "io",
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(dim: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            dim: dim.into(),
            expected,
            actual,
        }
    }
}
