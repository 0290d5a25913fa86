use thiserror::Error;

/// Errors produced by model construction, solvers and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or argument failed validation. `path` names the
    /// offending field in dotted form, e.g. `model.econ.kappa`.
    #[error("validation failed at `{path}`: {message}")]
    Validation { path: String, message: String },

    /// A solver precondition is not met (degenerate diffusion, CFL, ...).
    #[error("solver precondition violated: {0}")]
    Precondition(String),

    /// A policy artifact does not belong to the model it is used with.
    #[error("policy/model mismatch: {0}")]
    Mismatch(String),

    /// A state point lies outside the solved grid.
    #[error("point out of grid domain: {0}")]
    OutOfDomain(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
