use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A field value violates a domain requirement (positivity, finiteness, ...).
    #[error("domain error: {message} (nodes: {nodes:?})")]
    Domain { message: String, nodes: Vec<usize> },

    /// Inputs do not satisfy an operation's contract (size mismatch, missing nodes).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(message: impl Into<String>, nodes: Vec<usize>) -> Self {
        Error::Domain { message: message.into(), nodes }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }

    /// True for failures of the numerical pipeline, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. } | Error::SingularSystem(_) | Error::NotConverged { .. }
        )
    }
}
