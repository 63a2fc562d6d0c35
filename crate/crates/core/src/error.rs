use thiserror::Error;

/// Errors produced by the design and approximation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("model `{model}` is singular at x = {x} for the given parameters")]
    Domain { model: String, x: f64 },

    #[error("parameter vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid problem: {0}")]
    Spec(String),

    #[error("design has no mass left after cleaning")]
    EmptyDesign,

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("Gauss-Newton stalled for comparison {comparison} (gradient norm {grad_norm:e})")]
    NoDecrease { comparison: usize, grad_norm: f64 },

    #[error("linear program failed: {0}")]
    LpFailure(String),

    #[error("saddle point system is numerically singular")]
    SingularSystem,

    #[error("comparison {comparison} fits a nonlinear model and needs an initial parameter")]
    InitRequired { comparison: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
