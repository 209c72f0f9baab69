use thiserror::Error;

use crate::model::{ConfigError, ExprError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("{0}")]
    Unsupported(String),
    #[error("invariant violated at n={n}, j={j:?}, k={k}: {what}")]
    Invariant {
        what: String,
        n: i64,
        j: Option<usize>,
        k: usize,
    },
    #[error("minimizer did not converge at step n={n}: {iterations} iterations, tangential gradient {residual:e}")]
    NoConvergence {
        n: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("non-finite energy at step n={n}")]
    NonFinite { n: usize },
    #[error("limit step too large: |z*|={norm} at node {k}")]
    StepTooLarge { k: usize, norm: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// 2 for numerical failures of a run, 1 for bad input or I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant { .. }
            | Error::NoConvergence { .. }
            | Error::NonFinite { .. }
            | Error::StepTooLarge { .. } => 2,
            Error::Config(ConfigError::Hypotheses(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
