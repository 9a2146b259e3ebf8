use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("batch size error: {0}")]
    BatchSize(String),

    #[error("label error: {0}")]
    Label(String),

    /// Every label in the evaluated set belongs to one class.
    #[error("degenerate class distribution: {0}")]
    DegenerateClass(String),

    /// A training split contains a single class, so the classifier cannot be fit.
    #[error("label degeneracy: {0}")]
    LabelDegeneracy(String),

    #[error("non-finite value in {layer}")]
    Numeric { layer: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("length error in {path}: expected {expected} payload bytes, found {found}")]
    Length { path: PathBuf, expected: u64, found: u64 },

    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error in {path} at row {row}, column {column}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code for the command-line surface: 2 for configuration
    /// problems, 3 for data problems, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 2,
            Error::Numeric { .. } => 4,
            _ => 3,
        }
    }
}

pub(crate) fn ensure_finite<'a>(layer: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            layer: layer.to_string(),
        })
    }
}
