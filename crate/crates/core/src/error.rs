use thiserror::Error;

/// Errors raised by the toolkit. Numerical verdicts that are expected outcomes
/// (a trapped metric, a failed positivity check) are reported in result types,
/// not here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("size mismatch: expected {expected} samples, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("component count mismatch: {0} vs {1}")]
    ComponentMismatch(usize, usize),

    #[error("invalid time axis: {0}")]
    InvalidTimeAxis(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ellipticity violated: eigenvalue {eigenvalue:.4e} below {bound:.4e} at grid point {index}")]
    Ellipticity { eigenvalue: f64, bound: f64, index: usize },

    #[error("integrator failure: {0}")]
    Integrator(String),

    #[error("no admissible radius inside the box: exterior norm {norm:.4e} at R = {radius}")]
    NoAdmissibleRadius { radius: f64, norm: f64 },

    #[error("Neumann series does not contract: measured operator norm {0:.4}")]
    NotContracting(f64),

    #[error("linear solve stagnated: residual {residual:.3e} after {iterations} iterations")]
    SolveStagnated { residual: f64, iterations: usize },

    #[error("cover check failed: {0}")]
    CoverCheck(String),

    #[error("characteristic left the {radius} box inside the support of the source (seed x = {x:?}, xi = {xi:?})")]
    CharacteristicEscaped { radius: f64, x: [f64; 2], xi: [f64; 2] },
}

pub type Result<T> = std::result::Result<T, Error>;
