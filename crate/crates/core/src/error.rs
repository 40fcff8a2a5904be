use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invariant violation: {name} (residual {residual:.3e})")]
    InvariantViolation { name: String, residual: f64 },

    #[error("psd_sqrt: matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("{op}: Υᵀ + μ1 is numerically singular (condition number {condition:.3e})")]
    SingularShift { op: &'static str, condition: f64 },

    #[error("step: local error {error:.3e} still above cap after {retries} halvings")]
    StepTooLarge { error: f64, retries: usize },

    #[error("integrate: {0}")]
    IntegratorFailure(String),

    #[error("find_max_mu: no feasible μ on the search grid [{lo}, {hi}]")]
    NoFeasibleMu { lo: f64, hi: f64 },

    #[error("commuting_closed_form: Υ₀D₀ − D₀Υ₀ᵀ is not zero (relative residual {residual:.3e})")]
    NotCommuting { residual: f64 },

    #[error("self_dual_oracle: eigenvalue {eigenvalue:.3e} of h lies within the zero-mode tolerance")]
    ZeroMode { eigenvalue: f64 },

    #[error("{op}: flow did not converge (t = {t_final}, ‖D‖₂ = {d_norm:.3e})")]
    NotConverged {
        op: &'static str,
        t_final: f64,
        d_norm: f64,
    },

    #[error("{n_modes} modes exceeds the Fock-space cap of {cap}")]
    DimTooLarge { n_modes: usize, cap: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
