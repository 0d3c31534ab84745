use thiserror::Error;

/// Errors raised while building or evaluating a problem instance.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("block {block} component {index}: value {value} outside [{lo}, {hi}]")]
    OutsideDomain {
        block: usize,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("block index {0} out of range for {1} blocks")]
    BlockIndex(usize, usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error("penalty parameter must be positive, got {0}")]
    Penalty(f64),
    #[error("tolerances must be positive, got rho={rho}, eta={eta}")]
    Tolerance { rho: f64, eta: f64 },
    #[error("weak-convexity constants are required but absent")]
    MissingWeakConvexity,
    #[error("Slater data is required to evaluate the multiplier bound")]
    MissingSlater,
    #[error("gradient-norm bound unavailable for this smooth term")]
    MissingGradientBound,
    #[error("non-finite coefficient: {0}")]
    NonFinite(String),
}

/// Errors from the inner accelerated solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FistaError {
    #[error("invalid parameters: {0}")]
    Parameters(String),
    #[error("oracle returned a non-finite value at iteration {0}")]
    NonFinite(usize),
}

/// Errors from a block proximal sweep.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Fista(#[from] FistaError),
    #[error("inner solver did not certify block {block} ({status})")]
    SubproblemFailed { block: usize, status: String },
    #[error("prox stepsize of block {block} fell to {lambda:e}, below floor {floor:e}")]
    StepsizeFloor { block: usize, lambda: f64, floor: f64 },
    #[error("exact one-dimensional solve requested for block {block} of dimension {dim}")]
    NotOneDimensional { block: usize, dim: usize },
    #[error("invalid sweep input: {0}")]
    Input(String),
}

/// Errors from the outer ADMM drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

/// Errors from instance generation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    #[error("invalid instance spec: {0}")]
    Spec(String),
    #[error("could not draw a diagonal with a negative entry after {0} attempts")]
    Resample(usize),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Errors from reading or writing files.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unsupported schema tag {found:?}, expected {expected:?}")]
    Schema { found: String, expected: String },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid configuration: {0}")]
    Config(String),
}
