use thiserror::Error;

/// Errors produced by the solvers, generators, estimators and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("riccati iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergent { iterations: usize, residual: f64 },

    #[error("closed loop is not strictly stable (spectral radius {radius})")]
    Unstable { radius: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("variation budget infeasible: {0}")]
    InfeasibleBudget(String),

    #[error("no sequential stability certificate found: {0}")]
    StabilizationFailed(String),

    #[error("design matrix is numerically singular (eig_min {eig_min:e}, eig_max {eig_max:e})")]
    SingularDesign { eig_min: f64, eig_max: f64 },

    #[error("direction carries no excitation (denominator {0:e})")]
    DegenerateDirection(f64),

    #[error("off-diagonal ratio {ratio} exceeds 1/33")]
    ConditionViolated { ratio: f64 },

    #[error("bad controller configuration: {0}")]
    BadConfig(String),

    #[error("state diverged at t={t} (norm {norm:e})")]
    Diverged { t: usize, norm: f64 },

    #[error("config parse error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
