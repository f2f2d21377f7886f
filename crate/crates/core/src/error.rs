use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
    #[error("coefficient violates structural assumptions: {0}")]
    AssumptionViolation(String),
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("invalid exponent: {0}")]
    InvalidExponent(String),
    #[error("invalid time: {0}")]
    InvalidTime(String),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("point outside the domain: {0}")]
    OutOfDomain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("insufficient margin: {needed} extra steps required on each side")]
    InsufficientMargin { needed: usize },
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolverFailure {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("matrix is not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),
    #[error("lapack routine {routine} returned info = {info}")]
    Lapack { routine: &'static str, info: i32 },
    #[error("blow-up at t = {time} (sup norm {value:.3e})")]
    BlowUp { time: f64, value: f64 },
    #[error("time grid misalignment: {0}")]
    TimeMisalignment(String),
    #[error("test-function family is empty")]
    EmptyFamily,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("configuration hash mismatch: manifest {expected}, recomputed {found}")]
    HashMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
