use thiserror::Error;

pub type Result<T, E = LabError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("field has {found} values but the grid has {expected} points")]
    SizeMismatch { expected: usize, found: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range {min}..={max}")]
    IndexOutOfRange { index: usize, min: usize, max: usize },

    #[error("integration produced non-finite values at step {step} (t = {time})")]
    Blowup { step: usize, time: f64 },

    #[error("object {index} left its basin (moved {moved:.3e}, radius {radius:.3e}): object swap")]
    ObjectSwap { index: usize, moved: f64, radius: f64 },

    #[error("degenerate modulation Jacobian (condition number {0:.3e})")]
    Degenerate(f64),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
