//! Error types shared across the solver crates.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or internally inconsistent run configuration.
    #[error("config: {0}")]
    Config(String),

    /// A validated precondition on the problem data failed. `label` names
    /// the violated rule (A1..A5, M0) as documented in the README.
    #[error("precondition {label} violated: {msg}")]
    Assumption { label: &'static str, msg: String },

    /// A numerical kernel failed to converge or produced non-finite values.
    #[error("numeric failure in {what}: {detail}")]
    Numeric { what: &'static str, detail: String },

    /// The implicit time step did not converge; the caller may retry with a
    /// smaller step.
    #[error(
        "time step failed at t = {t:.6e}: Newton residual {residual:.3e} after {iters} iterations \
         (consider reducing dt)"
    )]
    StepFailed { t: f64, residual: f64, iters: usize },

    /// A coupled field violated a structural requirement (e.g. its surface
    /// part is not the trace of its bulk part).
    #[error("inconsistent coupled field: {0}")]
    Consistency(String),

    /// An operation was called with input outside its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn numeric(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric {
            what,
            detail: detail.into(),
        }
    }

    pub fn assumption(label: &'static str, msg: impl Into<String>) -> Self {
        Error::Assumption {
            label,
            msg: msg.into(),
        }
    }
}
