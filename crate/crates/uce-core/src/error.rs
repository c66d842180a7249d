//! Error type shared across the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration value (bad hyperparameter, malformed config file, ...).
    Config(String),
    /// Tensor shape or dimension mismatch.
    Dim(String),
    /// Violated call precondition (e.g. std over a singleton axis, backward on a non-scalar).
    Precondition(String),
    /// Math domain violation (log of a non-positive value, negative sigma, ...).
    Domain(String),
    /// Non-finite value where a finite one is required.
    Numeric(String),
    /// Invalid data content (out-of-range label, inconsistent dataset, ...).
    Data(String),
    /// Malformed file (bad magic, truncated payload, unsupported header).
    Format(String),
    /// A metric is undefined on the given input (empty confusion matrix, no samples).
    UndefinedMetric(String),
    /// Training produced a non-finite loss.
    Diverged { epoch: usize, iteration: usize },
    /// Underlying I/O failure.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Dim(m) => write!(f, "dimension error: {m}"),
            Error::Precondition(m) => write!(f, "precondition error: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::UndefinedMetric(m) => write!(f, "undefined metric: {m}"),
            Error::Diverged { epoch, iteration } => {
                write!(
                    f,
                    "diverged: non-finite loss at epoch {epoch}, iteration {iteration}"
                )
            }
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
