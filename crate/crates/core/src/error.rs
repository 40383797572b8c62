use std::path::PathBuf;

use thiserror::Error;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Usage => "usage",
            ErrorKind::Data => "data",
            ErrorKind::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {0}")]
    BadMagic(PathBuf),
    #[error("unsupported ADFV version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("trailing data in {path}: expected {expected} bytes, found {found}")]
    TrailingData {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("no levels")]
    NoLevels,
    #[error("missing label for sample {0}")]
    MissingLabel(String),
    #[error("duplicate sample id {0}")]
    DuplicateSample(String),
    #[error("anomalous sample {0} found in train pool")]
    AnomalousTrainSample(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty feature set")]
    Empty,
    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("singular covariance")]
    SingularCovariance,
    #[error("zero-variance features at indices {0:?}")]
    ZeroVariance(Vec<usize>),
    #[error("asymmetric input matrix (max deviation {0:e})")]
    Asymmetric(f64),
    #[error("all eigenvalues are zero")]
    ZeroSpectrum,
    #[error("negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),
    #[error("degenerate labels: need at least one sample of each class")]
    DegenerateLabels,
    #[error("unbounded: inverse CDF at p = 1")]
    Unbounded,
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("missing level {0}")]
    MissingLevel(String),
    #[error("duplicate level {0}")]
    DuplicateLevel(String),
    #[error("working point undefined for sum mode")]
    SumModeThreshold,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("json error in {path}: {message}")]
    Json { path: PathBuf, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            SumModeThreshold | InvalidArgument(_) => ErrorKind::Usage,
            InsufficientSamples { .. }
            | SingularCovariance
            | ZeroVariance(_)
            | Asymmetric(_)
            | ZeroSpectrum
            | NegativeEigenvalue(_)
            | Unbounded
            | Domain(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
