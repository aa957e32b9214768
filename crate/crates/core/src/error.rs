use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid box: lower[{coord}] = {lower} is not below upper[{coord}] = {upper}")]
    InvalidBox { coord: usize, lower: f64, upper: f64 },

    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),

    #[error("restricted Jacobian is rank deficient (sigma_m = {sigma:e}, tol = {tol:e})")]
    RankDeficient { sigma: f64, tol: f64 },

    #[error("orientation determinant {det:e} is degenerate")]
    DegenerateOrientation { det: f64 },

    #[error("more than one boundary coordinate conflicts with the ideal direction: {coords:?}")]
    MultipleBoundaryConflicts { coords: Vec<usize> },

    #[error("every coordinate up to {limit} is frozen")]
    AllFrozen { limit: usize },

    #[error("no unsatisfied coordinate at this point")]
    NoUnsatisfiedCoordinate,

    #[error("ridge correction diverged (residual {from:e} -> {to:e})")]
    CorrectionDiverged { from: f64, to: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("follow-the-ridge correction is singular; use a positive damping")]
    SingularCorrection,

    #[error("method needs the objective's Hessian, which this problem does not carry")]
    MissingObjective,

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, SolverError>;
