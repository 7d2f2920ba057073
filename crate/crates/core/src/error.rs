use thiserror::Error;

/// Errors raised by the solvers, evaluators and the experiment runner.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dyadic index {k} outside the resolvable window [{k_min}, {k_max}]")]
    BandOutOfRange { k: i32, k_min: i32, k_max: i32 },

    #[error("direction is not a unit vector (|e| = {norm})")]
    InvalidDirection { norm: f64 },

    #[error("direction {0:?} is not in the supported direction set")]
    UnsupportedDirection(Vec<f64>),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical divergence: NaN detected at step {step}")]
    Divergence { step: usize },

    #[error("stability violation at step {step}: sphere drift {drift:e} exceeds {limit:e}")]
    Stability { step: usize, drift: f64, limit: f64 },

    #[error("time step {dt:e} exceeds the stability bound {limit:e}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("heat flow far from equilibrium: |phi(S_max) - Q|_inf = {deviation} > 0.5")]
    FarFromEquilibrium { deviation: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("band leakage: {fraction:.3e} of the spectral mass lies outside I_{k}")]
    BandLeakage { k: i32, fraction: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("gate failed: {0}")]
    GateFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::GateFailed(_) => 1,
            LabError::Divergence { .. }
            | LabError::Stability { .. }
            | LabError::FarFromEquilibrium { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
