use thiserror::Error;

/// Errors produced across the pose-estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate orientation: {0}")]
    DegenerateOrientation(String),

    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },

    #[error("distortion inversion did not converge after {iterations} iterations")]
    DistortionInversion { iterations: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("marker id {0} not found")]
    MarkerNotFound(u32),

    #[error("calibration infeasible: {0}")]
    Calibration(String),

    #[error("LMS diverged: {0}")]
    StepSize(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
