use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("level set is not finite at node {node} ({value})")]
    NonFiniteLevelSet { node: usize, value: f64 },

    #[error("unsupported quadrature degree {degree} for {domain}")]
    UnsupportedQuadrature { degree: u32, domain: &'static str },

    #[error("invalid mesh parameters: {0}")]
    InvalidMesh(String),

    #[error("surface missed: no element of the background mesh is cut by the level set")]
    SurfaceMissed,

    #[error("SAV energy floor violated: E1 + C = {value:e} is below {floor:e}")]
    EnergyFloor { value: f64, floor: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular rank-one update: |1 + sigma v^T x1| = {0:e}")]
    SingularUpdate(f64),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("Krylov solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid history: {0}")]
    History(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time step {dt:e} fell below the minimum {dt_min:e}")]
    StepTooSmall { dt: f64, dt_min: f64 },

    #[error("step rejected {retries} times at t = {t}; last error estimate {estimate:e}")]
    TooManyRetries { retries: usize, t: f64, estimate: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
