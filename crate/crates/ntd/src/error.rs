//! Error type shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NtdError>;

#[derive(Debug, Error)]
pub enum NtdError {
    /// Model file could not be read.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Model file was not valid JSON.
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    /// Model failed structural or stochastic validation; the message names
    /// the offending field and index.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A matrix that must be invertible was singular to working precision.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// An iterative numeric routine failed to converge.
    #[error("numeric non-convergence: {0}")]
    NonConvergence(String),

    /// A routine requiring a Hurwitz matrix was given a non-Hurwitz one.
    #[error("matrix not Hurwitz: {0}")]
    NotHurwitz(String),

    /// Generic numeric precondition failure.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid run configuration (bad n, bad step-size parameters, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
