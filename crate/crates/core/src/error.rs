use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient calibration data: need at least {required} scores for alpha={alpha}, have {available}")]
    InsufficientCalibration {
        required: usize,
        available: usize,
        alpha: f64,
    },

    #[error("empty calibrator")]
    EmptyCalibrator,

    #[error("degenerate slice (group {group}, label {label}, {condition}): no calibration items")]
    DegenerateSlice {
        group: String,
        label: usize,
        condition: String,
    },

    #[error("classes with fewer items than splits: {0:?}")]
    SplitTooSmall(Vec<usize>),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("empty group in {0}")]
    EmptyGroup(String),

    #[error("unknown group at inference time for item {0}")]
    UnknownGroup(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
