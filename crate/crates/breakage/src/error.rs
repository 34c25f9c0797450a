use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration is internally inconsistent or violates a precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// A requested daughter moment does not converge (order too negative).
    #[error("divergent moment: {0}")]
    DivergentMoment(String),

    /// A theorem hypothesis required by a bound is violated.
    #[error("hypothesis violation: {0}")]
    Hypothesis(String),

    /// A bound or formula does not apply in the requested regime.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    /// Mismatched components were combined (e.g. state on a different grid).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
