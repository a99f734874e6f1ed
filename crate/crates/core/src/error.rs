use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pre-training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("patch {patch_w}x{patch_h} does not tile a {width}x{height} image")]
    NonDivisible {
        width: usize,
        height: usize,
        patch_w: usize,
        patch_h: usize,
    },
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("invalid scan geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("mask ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("forward pass needs at least one visible patch")]
    EmptyVisibleSet,
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("checkpoint checksum mismatch: manifest {expected:08x}, payload {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("lesion does not fit inside the image")]
    LesionOutOfBounds,
    #[error("too few samples: need {needed}, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("AUROC needs both positive and negative labels")]
    OneClassOnly,
    #[error("point set is empty")]
    EmptySet,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input is empty")]
    Empty,
    #[error("degenerate mask: {0}")]
    DegenerateMask(&'static str),
    #[error("both samples have zero variance")]
    DegenerateVariance,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
