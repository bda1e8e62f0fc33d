use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: need at least {min} Fock levels")]
    InvalidDimension { dim: usize, min: usize },

    #[error("diagonal function is not finite at n = {n}")]
    NonFinite { n: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("degenerate state: trace {trace:e} is below 1e-6 (truncation leakage?)")]
    DegenerateState { trace: f64 },

    #[error("not a density matrix: {0}")]
    InvalidState(String),

    #[error("operator is not Hermitian (defect {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("operator is not unitary (defect {defect:e})")]
    NotUnitary { defect: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("theta2 = {theta2} is resonant with k*pi/sqrt(n) for n = {n}, k = {k}")]
    ResonantTheta2 { theta2: f64, n: usize, k: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("channel completeness defect {defect:e} exceeds 1e-6")]
    IncompleteChannel { defect: f64 },

    #[error("decoherence step invalid: Gamma- * dim = {value:.3} >= 0.5; use a larger 1/kappa or a smaller dim")]
    StepValidity { value: f64 },

    #[error("perturbative estimate invalid: rate {rate} = {value:e} vanishes")]
    PerturbationInvalid { rate: String, value: f64 },

    #[error("steady state is ambiguous: eigenvalue-1 gap {gap:e}")]
    AmbiguousSteadyState { gap: f64 },

    #[error("no convergence after {steps} steps (last change {change:e})")]
    NoConvergence { steps: usize, change: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
