use thiserror::Error;

use crate::types::PrecisionDecomposition;

#[derive(Debug, Error)]
pub enum CsslError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (duality gap {duality_gap:e})")]
    NotConverged {
        iterations: usize,
        duality_gap: f64,
        best: Box<PrecisionDecomposition>,
        diagnostics: Box<crate::solver::SolveDiagnostics>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CsslError>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(CsslError::Validation(msg.into()))
}
