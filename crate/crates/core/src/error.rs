//! Error types shared across the crate.

use thiserror::Error;

/// Domain error during expression evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value {0}")]
    SqrtNegative(f64),
}

/// Construction errors for systems and variable spaces.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimensions must all be at least 1")]
    EmptyDimension,
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("expected {expected} expressions, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Simulation failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("non-finite state at time step {t}")]
    Divergence { t: usize },
    #[error("input sequence has length {got}, horizon needs {needed}")]
    InputLength { needed: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("horizon too short: need T >= {0}")]
    HorizonTooShort(usize),
}

/// Equilibrium solver failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error("Newton iteration did not converge; best residual {residual:.3e}")]
    NoConvergence { residual: f64 },
    #[error("singular Jacobian at iterate")]
    SingularJacobian,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Set / embedding construction failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("interval {dim} has lo > hi")]
    BadInterval { dim: usize },
    #[error("non-finite dynamics value at a grid point")]
    NonFiniteAtGrid,
    #[error("scheduling map references unknown variable `{0}`")]
    UnknownVariable(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// LMI assembly and solve failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmiError {
    #[error("storage basis reads scheduling coordinate {coord} which is not state-mapped")]
    BasisReadsInputCoordinate { coord: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("R must be negative semidefinite for an incremental conclusion (max eigenvalue {0:.3e})")]
    RNotNegativeSemidefinite(f64),
    #[error("passivity analysis needs n_w == n_z, got {n_w} and {n_z}")]
    PassivityDimension { n_w: usize, n_z: usize },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Certificate construction failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("CB must vanish for the restricted form; got max entry {0:.3e}")]
    CbNotZero(f64),
    #[error("R must be negative semidefinite, max eigenvalue {0:.3e}")]
    RNotNegativeSemidefinite(f64),
    #[error("system is not in the restricted form: {0}")]
    NotRestrictedForm(String),
    #[error("no sample pair constrains alpha")]
    Unconstrained,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Geodesic / incremental verification failures.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeodesicError {
    #[error("metric not positive definite at a waypoint")]
    MetricNotPositiveDefinite,
    #[error("need at least one path segment")]
    NoSegments,
    #[error("time index {t} outside reference horizon {horizon}")]
    HorizonExceeded { t: usize, horizon: usize },
    #[error("trajectory horizons differ: {0} vs {1}")]
    HorizonMismatch(usize, usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
