use thiserror::Error;

/// Errors raised by mesh construction, discrete operators, solvers and probes.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("set mismatch: expected {expected}, found {found}")]
    SetMismatch { expected: String, found: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("step-size condition violated: {0}")]
    StepSize(String),

    #[error("admissibility violated: {0}")]
    Admissibility(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("singular step matrix at time index {step}")]
    Singular { step: usize },

    #[error("conjugate gradient stopped after {iterations} iterations with relative residual {residual:e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
