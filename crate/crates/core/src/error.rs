use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible layout: waveguide {waveguide}, antenna {antenna}: {reason}")]
    InfeasibleLayout {
        waveguide: usize,
        antenna: usize,
        reason: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("user {user} at ({x}, {y}) lies outside the service region")]
    UserOutsideRegion { user: usize, x: f64, y: f64 },

    #[error("weights must be strictly positive (index {index} is {value})")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("empty batch")]
    EmptyBatch,

    #[error("spec error: {0}")]
    Spec(String),

    #[error("dataset schema mismatch: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
