use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the function (non-positive input, share, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameter values the parametric forms do not support (e.g. CES with sigma = 0).
    #[error("unsupported parameter: {0}")]
    UnsupportedParameter(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// An iterative solver stopped without meeting its tolerance.
    #[error("solver failed after {iterations} iterations: {message} (last iterate {last_iterate:?})")]
    Solver { message: String, iterations: usize, last_iterate: Vec<f64> },

    #[error("simulation failed for firm {firm_id} at t={t}: {source}")]
    Simulation {
        firm_id: u32,
        t: i64,
        #[source]
        source: Box<Error>,
    },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn solver(msg: impl Into<String>, iterations: usize, last: &[f64]) -> Self {
        Error::Solver { message: msg.into(), iterations, last_iterate: last.to_vec() }
    }
}
