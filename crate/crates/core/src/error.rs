use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad parameters or inconsistent arguments.
    Usage,
    /// Malformed or missing input data.
    Data,
    /// A numerical routine could not produce a valid result.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cell dimension mismatch: {left} vs {right}")]
    CellDimMismatch { left: usize, right: usize },

    #[error("representation mismatch: {0}")]
    RepresentationMismatch(String),

    #[error("file size {size} is not a multiple of the {record}-byte record size")]
    FileSizeMismatch { size: usize, record: usize },

    #[error("expected {expected} records, found {found}")]
    RecordCountMismatch { expected: usize, found: usize },

    #[error("label {label} out of range (class count {class_count})")]
    LabelOutOfRange { label: usize, class_count: usize },

    #[error("fold sizes sum to {sum}, expected {n}")]
    SizeSumMismatch { sum: usize, n: usize },

    #[error("fold {fold} is empty")]
    EmptyFold { fold: usize },

    #[error("image dimension {dim} is not divisible by cell size {cell_size}")]
    DimensionNotDivisible { dim: usize, cell_size: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("matrix is not symmetric (max deviation {deviation:e})")]
    AsymmetricInput { deviation: f64 },

    #[error("matrix is not positive semi-definite (eigenvalue or pivot {value:e})")]
    NotPositiveSemidefinite { value: f64 },

    #[error("no positive eigenvalue")]
    NoPositiveEigenvalue,

    #[error("zero-variance input")]
    ZeroVariance,

    #[error("quadratic form is not positive ({0:e})")]
    NonPositiveQuadraticForm(f64),

    #[error("eigen decomposition did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("class {class} has {available} samples, {requested} requested")]
    ClassUndersized {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("k = {k} out of range for {n} points")]
    KOutOfRange { k: usize, n: usize },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            DimensionMismatch { .. }
            | CellDimMismatch { .. }
            | RepresentationMismatch(_)
            | SizeSumMismatch { .. }
            | EmptyFold { .. }
            | KOutOfRange { .. }
            | InvalidParameter(_) => ErrorKind::Usage,
            FileSizeMismatch { .. }
            | RecordCountMismatch { .. }
            | LabelOutOfRange { .. }
            | DimensionNotDivisible { .. }
            | ClassUndersized { .. }
            | SingleClass
            | Io { .. }
            | Parse { .. }
            | Json(_) => ErrorKind::Data,
            DegenerateInput(_)
            | AsymmetricInput { .. }
            | NotPositiveSemidefinite { .. }
            | NoPositiveEigenvalue
            | ZeroVariance
            | NonPositiveQuadraticForm(_)
            | NonConvergence { .. } => ErrorKind::Numerical,
        }
    }
}
