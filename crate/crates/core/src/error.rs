use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The empty sparsity pattern has no eigen-spectrum.
    #[error("empty sparsity pattern has no spectrum")]
    EmptyModel,

    /// A quantity would not fit in an `f64`.
    #[error("overflow: {0}")]
    Overflow(String),

    /// The inputs violate the hypotheses under which a bound is stated.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// An iterative method or factorization failed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
