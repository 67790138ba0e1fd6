use thiserror::Error;

pub type Result<T> = std::result::Result<T, EkError>;

#[derive(Debug, Error)]
pub enum EkError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("density {value} outside working interval [{lo}, {hi}]")]
    DensityRange { value: f64, lo: f64, hi: f64 },

    #[error("velocity field is not irrotational (curl diagnostic {curl:.3e})")]
    NonIrrotational { curl: f64 },

    #[error("step rejected at t = {t}: {reason}")]
    StepRejected { t: f64, reason: String },

    #[error("Duhamel quadrature not converged (relative change {rel_change:.3e} under node doubling)")]
    QuadratureNotConverged { rel_change: f64 },

    #[error("decay fit needs at least {need} positive samples in the window, got {got}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("blow-up criterion tripped at t = {t}: {reason}")]
    BlowUp { t: f64, reason: String },

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EkError {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            EkError::InvalidGrid(_) => "invalid-grid",
            EkError::GridMismatch => "grid-mismatch",
            EkError::DegenerateInput(_) => "degenerate-input",
            EkError::DensityRange { .. } => "density-range",
            EkError::NonIrrotational { .. } => "non-irrotational",
            EkError::StepRejected { .. } => "step-rejected",
            EkError::QuadratureNotConverged { .. } => "quadrature-not-converged",
            EkError::InsufficientSamples { .. } => "insufficient-samples",
            EkError::BlowUp { .. } => "blow-up",
            EkError::Format(_) => "format",
            EkError::Io(_) => "io",
        }
    }
}
