use thiserror::Error;

use crate::graph::NodeId;

/// Errors shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("graph error: {0}")]
    Graph(String),

    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("node {0} is protected and cannot leave the network")]
    ProtectedNode(NodeId),

    #[error("graph generator gave up after {attempts} attempts")]
    RetryBudget { attempts: usize },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("power iteration did not converge after {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("blended dynamics is not contractive (gamma = {gamma})")]
    NotContractive { gamma: f64 },

    #[error("search exhausted: no K <= {k_max} reaches eps = {eps}")]
    SearchExhausted { k_max: usize, eps: f64 },

    #[error("at t = {t}: {source}")]
    AtTime {
        t: i64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn graph(msg: impl Into<String>) -> Self {
        Error::Graph(msg.into())
    }

    pub(crate) fn assumption(msg: impl Into<String>) -> Self {
        Error::Assumption(msg.into())
    }

    pub(crate) fn at(self, t: i64) -> Self {
        Error::AtTime {
            t,
            source: Box::new(self),
        }
    }

    /// True when the failure is a violated modelling assumption rather than
    /// a numerical breakdown. Used for the CLI exit code contract.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Graph(_)
            | Error::Parse { .. }
            | Error::ProtectedNode(_)
            | Error::Parameter { .. }
            | Error::Assumption(_)
            | Error::Dimension { .. }
            | Error::NotContractive { .. }
            | Error::Config(_) => true,
            Error::AtTime { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_open_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter {
            name,
            value,
            reason: "must lie in the open interval (0, 1)",
        })
    }
}
