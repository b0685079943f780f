use thiserror::Error;

/// Errors produced by the detection library.
#[derive(Debug, Error)]
pub enum DakError {
    /// Malformed or rejected input data (ragged rows, NaN/Inf entries, bad files).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or unusable configuration (e.g. N < 4, bandwidth out of range).
    #[error("configuration error: {0}")]
    Config(String),

    /// Calibration produced a scale estimate that cannot studentize the test.
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    /// Numerical failure (factorization breakdown, singular template).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Operation called in a state that does not admit it.
    #[error("state error: {0}")]
    State(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DakError>;
