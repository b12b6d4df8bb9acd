use thiserror::Error;

use crate::pde_solvers::SolverReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid subdomain: {0}")]
    InvalidMask(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    #[error("invalid parameter `{key}`: {message}")]
    InvalidParameter { key: String, message: String },

    #[error("linear solve did not converge (iterations {}, residual {:.3e})", .0.iterations, .0.residual)]
    LinearSolve(SolverReport),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {residual:.3e})")]
    FixedPoint { iterations: usize, residual: f64 },

    #[error("dual iteration did not converge after {iterations} iterations (fixed-point residual {residual:.3e})")]
    DualNotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<crate::leader::DualIterate>,
    },

    #[error("terminal constraint violated: ||y(T) - target|| = {error:.6e} > alpha + tol = {bound:.6e}")]
    TerminalConstraint { error: f64, bound: f64 },

    #[error("diagnostic not applicable: {0}")]
    NotApplicable(String),

    #[error("numerical blow-up: {0}")]
    BlowUp(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn param(key: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
