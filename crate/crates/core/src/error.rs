use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
///
/// Variants are grouped by [`ErrorClass`] so front ends can map them onto
/// exit codes without matching each variant.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("degenerate vector ({what}): norm below {floor:e}")]
    DegenerateVector { what: String, floor: f64 },

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no in-batch negatives available for pair {pair}")]
    NoNegatives { pair: usize },

    #[error("numeric domain error: {0}")]
    Domain(String),

    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged { epoch: usize, step: usize },

    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: unsupported dtype tag {tag}")]
    UnsupportedDtype { path: PathBuf, tag: u8 },

    #[error("{path}: truncated payload (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingBytes { path: PathBuf, extra: u64 },

    #[error("{path}: non-finite value at index {index}")]
    NonFiniteData { path: PathBuf, index: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{path}: feature dimension {found} does not match configured {expected}")]
    DimensionMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("infeasible synthetic spec: {0}")]
    SyntheticSpec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("segmentation format error: {0}")]
    SegmentationFormat(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping of [`Error`] variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration or arguments.
    Usage,
    /// Malformed, missing or inconsistent input data.
    Data,
    /// Numerical failure: non-finite values, domain errors, divergence.
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Config(_) | Parameter(_) | SyntheticSpec(_) => ErrorClass::Usage,
            NonFinite { .. } | Domain(_) | TrainingDiverged { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
