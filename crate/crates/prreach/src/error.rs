//! Error types shared across the crate.

use thiserror::Error;

/// Errors from zonotope / polygon / simplex primitives.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate set: {0}")]
    Degenerate(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("order-reduction target {target} is below the dimension {dim}")]
    ReductionTarget { target: usize, dim: usize },
}

/// Errors from model construction, discretization and gain synthesis.
#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model is already discrete")]
    AlreadyDiscrete,
    #[error("model must be discrete for this operation")]
    NotDiscrete,
    #[error("Riccati iteration did not converge within {iterations} iterations (residual {residual:.3e})")]
    RiccatiNonConvergence { iterations: usize, residual: f64 },
    #[error("matrix inversion failed: {0}")]
    Singular(String),
}

/// Errors from hazard-grid ingestion and polynomial fitting.
#[derive(Debug, Error)]
pub enum HazardError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed grid row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("grid file is empty")]
    EmptyGrid,
    #[error("fit is singular: {0}")]
    SingularFit(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Errors from risk evaluation and threshold construction.
#[derive(Debug, Error)]
pub enum RiskError {
    #[error("probability {value} at step {step} is outside [0, 1]")]
    OutOfRange { step: usize, value: f64 },
    #[error("onset step {onset} is outside 1..={horizon}")]
    OnsetOutOfRange { onset: usize, horizon: usize },
    #[error("threshold profile violates the overall bound: 1 - prod(1 - r_k) = {cumulative} > r = {overall}")]
    InconsistentThresholds { cumulative: f64, overall: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Errors from reach-set propagation.
#[derive(Debug, Error)]
pub enum ReachError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Errors from the risk-bounded gain optimization.
#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("baseline propagation failed: {0}")]
    Propagation(#[from] ReachError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("singular value decomposition failed: {0}")]
    Svd(String),
}

/// Errors from flight simulation and the experiment drivers.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
