//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge: panel budget exhausted with estimated log-error {achieved_error:e}")]
    Quadrature { achieved_error: f64 },

    #[error("root finder failed on bracket [{lo}, {hi}]")]
    RootFinding { lo: f64, hi: f64 },

    #[error("step size underflow in explicit integrator (max |v| = {max_abs_v})")]
    StepUnderflow { max_abs_v: f64 },

    #[error("required radius {needed} exceeds the sampled window (available {available})")]
    WindowTooSmall { needed: usize, available: usize },

    #[error("active set is empty")]
    EmptyActiveSet,

    #[error("iteration did not converge (residual {residual:e})")]
    NotConverged { residual: f64 },

    #[error("partition infeasible: {0}")]
    PartitionInfeasible(String),

    #[error("schedule requires L = {required_l}, beyond the configured budget {budget}")]
    ScheduleTooLarge { required_l: f64, budget: f64 },

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
