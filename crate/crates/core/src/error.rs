use alloc::string::String;
use core::fmt;

/// Errors raised by the simulation core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    Config { key: &'static str, reason: String },
    /// An operation was called with arguments that break its contract
    /// (dimension mismatch, calling recourse on an accepted user, ...).
    Contract(String),
    /// Input data does not match the declared schema.
    Schema(String),
    /// Input data is malformed (non-binary label, empty table, ...).
    Data(String),
    /// The recourse solver produced a non-finite iterate.
    Solver { iteration: usize, score: f64, objective: f64 },
    /// The closed-form recourse oracle failed to converge.
    Oracle { iterations: usize, residual: f64 },
    /// Divergence between two empty histograms is undefined.
    EmptyHistograms,
}

impl Error {
    pub(crate) fn config(key: &'static str, reason: impl Into<String>) -> Self {
        Error::Config { key, reason: reason.into() }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config { key, reason } => write!(f, "invalid configuration `{key}`: {reason}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Schema(msg) => write!(f, "schema error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Solver { iteration, score, objective } => {
                write!(f, "recourse solver diverged at iteration {iteration} (score {score}, objective {objective})")
            }
            Error::Oracle { iterations, residual } => {
                write!(f, "fixed-point oracle did not converge after {iterations} iterations (residual {residual:e})")
            }
            Error::EmptyHistograms => f.write_str("divergence of two empty histograms is undefined"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
