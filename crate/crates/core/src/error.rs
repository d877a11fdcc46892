use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for process exit codes and HTTP status mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Io,
    Validation,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Io => 1,
            ErrorKind::Validation => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed line: {reason}")]
    MalformedLine { line: usize, reason: String },

    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("header declares {expected} words but the file contains {found}")]
    CountMismatch { expected: usize, found: usize },

    #[error("embedding file contains no vectors")]
    EmptyFile,

    #[error("vector for '{0}' has zero norm")]
    ZeroVector(String),

    #[error("embeddings must be unit-normalized first (use --normalize)")]
    NotNormalized,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("empty word set: {0}")]
    EmptySet(String),

    #[error("category '{category}': defining set(s) {sets:?} have no words in the vocabulary")]
    FatalValidation { category: String, sets: Vec<usize> },

    #[error("invalid component count {k}: must be in 1..={max}")]
    InvalidK { k: usize, max: usize },

    #[error("matrix has no nonzero rows")]
    ZeroMatrix,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("row {0} of the combined subspace is numerically zero")]
    ZeroRow(usize),

    #[error("subspace '{0}' does not have orthonormal components")]
    NotOrthonormal(String),

    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),

    #[error("'{0}' lies inside the bias subspace")]
    FullyContained(String),

    #[error("equality set member '{0}' has the same bias component as the set mean")]
    EqualizeDegenerate(String),

    #[error("equalize radicand is negative (|mu - mu_B| = {0}); inputs are not unit vectors")]
    RadicandNegative(f64),

    #[error("degenerate input in strict mode: {0}")]
    StrictDegeneracy(String),

    #[error("attribute set is empty")]
    EmptyAttributeSet,

    #[error("samples have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("overall {0} is undefined (zero denominator)")]
    UndefinedOverallRate(&'static str),

    #[error("no group has a defined false positive or false negative rate")]
    NoValidGroups,

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("csv: {0}")]
    Csv(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::ZeroMatrix
            | Error::ZeroRow(_)
            | Error::FullyContained(_)
            | Error::EqualizeDegenerate(_)
            | Error::RadicandNegative(_)
            | Error::StrictDegeneracy(_) => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }
}
