use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid mass system: {0}")]
    InvalidMasses(String),

    /// Two bodies coincide (or nearly so) and the potential is undefined.
    #[error("collision between bodies {i} and {j} (distance {distance:e})")]
    Collision { i: usize, j: usize, distance: f64 },

    #[error("outside the affine shape chart: {0}")]
    Chart(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Newton iteration for a central configuration did not converge.
    /// `trace` holds |grad V| after every iteration.
    #[error("no convergence after {iterations} iterations (|grad V| = {residual:e})")]
    Divergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("maximum number of steps ({0}) exceeded")]
    MaxSteps(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("not certifiable: {0}")]
    NotCertifiable(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the command line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidMasses(_) => "invalid_masses",
            Error::Collision { .. } => "collision",
            Error::Chart(_) => "chart",
            Error::Degenerate(_) => "degenerate",
            Error::Divergence { .. } => "divergence",
            Error::StepSizeUnderflow { .. } => "step_size_underflow",
            Error::NonFinite { .. } => "non_finite",
            Error::MaxSteps(_) => "max_steps",
            Error::Precondition(_) => "precondition",
            Error::NotCertifiable(_) => "not_certifiable",
            Error::Fit(_) => "fit",
            Error::Json(_) => "json",
        }
    }
}
