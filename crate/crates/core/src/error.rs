use thiserror::Error;

/// Errors raised by the bilevel library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (dimensions, finiteness, symmetry).
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A problem, schedule or experiment was configured inconsistently.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A factorization or recursion broke down.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An iterative solve hit its iteration cap.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    /// Malformed dataset text.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Dataset content unusable for the requested problem.
    #[error("data error: {0}")]
    Data(String),

    /// Post-processing of recorded trajectories failed.
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_check(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::RejectedInput(format!(
            "{what}: expected dimension {expected}, got {got}"
        )))
    }
}
