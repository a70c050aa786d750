use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transfer function is improper: numerator degree {num} exceeds denominator degree {den}")]
    ImproperTransferFunction { num: usize, den: usize },

    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),

    #[error("model is not stable: {0}")]
    UnstableModel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("horizon of {horizon} steps is shorter than one basis support ({min} steps)")]
    HorizonTooShort { horizon: usize, min: usize },

    #[error("filtered basis is rank deficient or ill-conditioned (condition {condition:e}); singular values: {singular_values:?}")]
    IllConditionedBasis {
        condition: f64,
        singular_values: Vec<f64>,
    },

    #[error("batch {got} applied out of order, expected {expected}")]
    OutOfOrderBatch { expected: usize, got: usize },

    #[error("batch {0} was never produced")]
    BatchNeverProduced(usize),

    #[error("measurement for batch {got} does not match the next expected batch {expected}")]
    MeasurementMismatch { expected: usize, got: usize },

    #[error("recursive least squares covariance lost positive definiteness: {0}")]
    CovarianceNotPositiveDefinite(String),

    #[error("run halted by the stability monitor at window {window} (spectral radius {radius})")]
    StabilityHalt { window: usize, radius: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
