use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The relative covariance has an eigenvalue below `1e-12`; the caller
    /// should fall back to the exact overlap test.
    #[error("degenerate covariance (smallest eigenvalue {min_eigenvalue:e})")]
    DegenerateCovariance { min_eigenvalue: f64 },

    #[error("ego position ({x}, {y}) is outside the drivable area")]
    OffDrivableArea { x: f64, y: f64 },

    #[error("sample {sample_index}: no drivable position after {attempts} draws")]
    SamplingExhausted { sample_index: u64, attempts: u32 },

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("parse error at line {line}{}: {message}", field.as_deref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse { line: usize, field: Option<String>, message: String },

    #[error("scenario failed validation: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
