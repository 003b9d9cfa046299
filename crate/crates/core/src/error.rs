use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model error at t={t}, x={x:?}: {what}")]
    Model { t: f64, x: Vec<f64>, what: String },
    #[error("integration failed at t={t}: {reason}")]
    Integration { t: f64, state: Vec<f64>, reason: String },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("tolerance {tolerance:e} not met: estimate {estimate} with error indicator {achieved:e}")]
    Tolerance { estimate: f64, achieved: f64, tolerance: f64 },
    #[error("no convergence after {iterations} iterations (contraction estimate {contraction})")]
    NoConvergence { iterations: usize, contraction: f64 },
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::Numeric(msg.into())
}
