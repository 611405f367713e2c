use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or parameter outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Quadrature, factorization or series evaluation did not reach its tolerance.
    #[error("numeric error: {message} (achieved error estimate {achieved:e})")]
    Numeric { message: String, achieved: f64 },

    /// The plug-in ratio of the H1 estimator has a vanishing denominator.
    #[error("degenerate ratio: denominator {denominator:e} is indistinguishable from zero")]
    DegenerateRatio { denominator: f64 },

    /// A dense covariance would exceed the configured memory cap.
    #[error("resource error: {0}")]
    Resource(String),

    /// Broken internal assumption, e.g. a non-monotone moment function.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>, achieved: f64) -> Self {
        Error::Numeric {
            message: msg.into(),
            achieved,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
