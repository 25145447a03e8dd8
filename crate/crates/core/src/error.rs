use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image is {height}x{width}, both sides must be at least {min}")]
    DimensionTooSmall { height: usize, width: usize, min: usize },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("residual {value} is outside the coding alphabet [-{limit}, {limit}]")]
    SymbolOutOfAlphabet { value: i64, limit: i64 },

    #[error("corrupt bitstream: {0}")]
    CorruptStream(String),

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unknown cut point `{0}`")]
    UnknownCutPoint(String),

    #[error("annotation schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("sequence {0} has no ground-truth annotation")]
    MissingAnnotation(usize),

    #[error("sequence has no frames")]
    EmptySequence,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),

    #[error("task network weights changed during training (fingerprint {expected} -> {actual})")]
    FrozenViolation { expected: String, actual: String },

    #[error("rate-distortion curves do not overlap")]
    NoOverlap,

    #[error("no valid pixels to evaluate")]
    NoValidPixels,

    #[error("ground truth contains no instances")]
    EmptyGroundTruth,

    #[error("area must be positive")]
    ZeroArea,

    #[error("image `{id}`: {source}")]
    Image {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
