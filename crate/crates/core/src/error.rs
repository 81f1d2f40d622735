use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input rejected before any numerical work. `key` names the offending
    /// parameter so callers can point at it.
    #[error("invalid {key}: {message}")]
    Invalid { key: String, message: String },

    #[error("control sets differ: {0}")]
    ControlMismatch(String),

    #[error("2D diffusion must be diagonal for the monotone scheme (control `{control}`, node {node}: a01 = {value})")]
    NonDiagonalDiffusion { control: String, node: usize, value: f64 },

    #[error("policy iteration did not converge after {iterations} iterations (last residual {residual:.3e})")]
    HowardNotConverged { iterations: usize, residual: f64 },

    /// A non-positive pivot in policy evaluation. The scheme is an M-matrix
    /// whenever lambda > 0, so this points at a monotonicity bug.
    #[error("singular policy-evaluation system at row {row} (pivot {pivot:.3e})")]
    SingularSystem { row: usize, pivot: f64 },

    #[error("vanishing-discount continuation stopped at lambda = {lambda:.3e} without meeting tolerance (|dU| = {du:.3e}, spread = {spread:.3e})")]
    ErgodicNotConverged {
        lambda: f64,
        du: f64,
        spread: f64,
        trace: Vec<crate::ergodic::LambdaStep>,
    },

    #[error("effective equation fixed point stagnated after {iterations} iterations (history: {history:?})")]
    FixedPointStagnated { iterations: usize, history: Vec<f64> },

    #[error("fit needs {needed} positive samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

impl Error {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. } | Error::ControlMismatch(_) | Error::NonDiagonalDiffusion { .. }
        )
    }
}
