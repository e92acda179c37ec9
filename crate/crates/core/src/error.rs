use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed measure document: {0}")]
    Schema(String),
    #[error("measure invariant violated: {0}")]
    Invariant(String),
    #[error("interval kind does not match the measure side: {0}")]
    IntervalMismatch(String),
    #[error("measure puts no mass on cell {cell}")]
    ZeroIncrement { cell: usize },
    #[error("functions live on different grids")]
    GridMismatch,
    #[error("position {0} is not a grid node")]
    NotOnGrid(f64),
    #[error("series did not converge: {0}")]
    TruncationNotConverged(String),
    #[error("root at z = {z} has a full-rank boundary matrix (smallest singular value {sigma_min})")]
    SuspectRoot { z: f64, sigma_min: f64 },
    #[error("null-space vectors of a double eigenvalue are numerically parallel at lambda = {0}")]
    DegenerateSpan(f64),
    #[error("coefficient must be positive: {0}")]
    CoefficientNotPositive(String),
    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("right-hand side has nonzero V-mean {0:e} while kappa vanishes")]
    SolvabilityViolation(f64),
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("test function does not vanish at the origin (value {0:e})")]
    BoundaryViolation(f64),
    #[error("beta = {beta} must exceed d/4 = {limit}")]
    BetaTooSmall { beta: f64, limit: f64 },
    #[error("axis {axis} basis reaches gamma {max_gamma}, cutoff needs {needed}")]
    AxisCoverageInsufficient { axis: usize, max_gamma: f64, needed: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "SchemaError",
            Error::Invariant(_) => "InvariantError",
            Error::IntervalMismatch(_) => "IntervalMismatch",
            Error::ZeroIncrement { .. } => "ZeroIncrement",
            Error::GridMismatch => "GridMismatch",
            Error::NotOnGrid(_) => "NotOnGrid",
            Error::TruncationNotConverged(_) => "TruncationNotConverged",
            Error::SuspectRoot { .. } => "SuspectRoot",
            Error::DegenerateSpan(_) => "DegenerateSpan",
            Error::CoefficientNotPositive(_) => "CoefficientNotPositive",
            Error::ConvergenceFailure { .. } => "ConvergenceFailure",
            Error::SolvabilityViolation(_) => "SolvabilityViolation",
            Error::SingularSystem(_) => "SingularSystem",
            Error::BoundaryViolation(_) => "BoundaryViolation",
            Error::BetaTooSmall { .. } => "BetaTooSmall",
            Error::AxisCoverageInsufficient { .. } => "AxisCoverageInsufficient",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }

    /// Numerical failures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::TruncationNotConverged(_)
                | Error::ConvergenceFailure { .. }
                | Error::SuspectRoot { .. }
                | Error::DegenerateSpan(_)
                | Error::SingularSystem(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
