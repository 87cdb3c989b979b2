use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor did not have the extent an operation needed.
    #[error("shape mismatch in {op}: {dim} is {actual}, expected {expected}")]
    Shape {
        op: &'static str,
        dim: String,
        expected: String,
        actual: String,
    },

    /// The layer chain of a model is not internally consistent.
    #[error("invalid model at layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("trace does not belong to this model: {0}")]
    StaleTrace(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("image decode error: {0}")]
    Decode(String),

    /// Generic validation failure on caller-supplied data.
    #[error("validation error: {0}")]
    Validation(String),

    /// A visualizer setting violated its schema.
    #[error("invalid setting \"{key}\": {constraint}")]
    Setting { key: String, constraint: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown visualizer \"{name}\" (available: {})", available.join(", "))]
    UnknownVisualizer { name: String, available: Vec<String> },

    #[error("visualizer \"{0}\" is already registered")]
    DuplicateVisualizer(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png encode error: {0}")]
    Encode(String),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn setting(key: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::Setting {
            key: key.into(),
            constraint: constraint.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
