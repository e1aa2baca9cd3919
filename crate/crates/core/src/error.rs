use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("qubit index {index} out of range for {n_qubits}-qubit register")]
    QubitOutOfRange { index: usize, n_qubits: usize },

    #[error("operator is not unitary (deviation {deviation:.3e})")]
    NonUnitary { deviation: f64 },

    #[error("operator is not Hermitian (deviation {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("state is not normalized (norm {norm:.12})")]
    Unnormalized { norm: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("step size {dt:.3e} exceeds stability guard {limit:.3e}")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("density matrix lost positivity (min eigenvalue {min_eigenvalue:.3e})")]
    PositivityViolation { min_eigenvalue: f64 },

    #[error("Kraus operators are incomplete (deviation {deviation:.3e})")]
    IncompleteKraus { deviation: f64 },

    #[error("rate matrix has negative eigenvalue {eigenvalue:.3e}")]
    NegativeRate { eigenvalue: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    SolverFailed { iterations: usize, residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("not supported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
