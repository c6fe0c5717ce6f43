use thiserror::Error;

use crate::model::RunResult;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("invalid cardinality K = {k} for M = {m}")]
    InvalidK { k: usize, m: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        residual: f64,
        iterations: usize,
        partial: Option<Box<RunResult>>,
    },

    #[error("anchor violates its own linearized constraint (residual {residual:e})")]
    InfeasibleAnchor { residual: f64 },

    #[error("negative unspent energy {value:e} for sensor {sensor}")]
    NegativeResidual { sensor: usize, value: f64 },

    #[error("enumeration needs {candidates} candidates (limit {limit})")]
    TooLarge { candidates: f64, limit: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
