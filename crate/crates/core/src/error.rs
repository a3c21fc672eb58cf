use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("number of labels must be at least 2, got {0}")]
    TooFewLabels(usize),

    #[error("row {row}: expected {expected} probabilities, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: label {label} out of range for {num_labels} labels")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_labels: usize,
    },

    #[error("row {row}: probabilities sum to {sum}, outside the repair tolerance {tolerance}")]
    ProbabilitySum { row: usize, sum: f64, tolerance: f64 },

    #[error("row {row}: invalid probability {value} at position {position}")]
    InvalidProbability {
        row: usize,
        position: usize,
        value: f64,
    },

    #[error("risk level must lie in the open interval (0, 1), got {0}")]
    InvalidRiskLevel(f64),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch: {left} prediction sets but {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("batch has no test label; the martingale cannot advance without feedback")]
    MissingLabel,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Machine-readable category, used by the CLI for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => "parse",
            Error::InvalidParameter { .. } | Error::InvalidRiskLevel(_) => "config",
            _ => "validation",
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
