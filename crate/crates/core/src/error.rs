use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Structurally malformed input (bad breakpoints, wrong matrix shape, ...).
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("block {block} receives no grid index at n = {n}")]
    BlockUnresolved { block: usize, n: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("fixed-point iteration did not converge at eta = {eta:e}: residual {residual:e} after {iterations} iterations")]
    NonConvergence {
        eta: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::NumericalFailure(_)
        )
    }

    /// Attaches the spectral parameter at which a solve failed.
    pub(crate) fn at_eta(self, eta: f64) -> Self {
        match self {
            Error::NonConvergence {
                residual,
                iterations,
                ..
            } => Error::NonConvergence {
                eta,
                residual,
                iterations,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
