use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("integration failed at t = {time:.6e} s: {reason}")]
    IntegrationFailure { time: f64, reason: String },

    #[error("ill-posed inversion: |F(G)| falls to {ratio:.3e} of its maximum with zero noise power")]
    IllPosed { ratio: f64 },

    #[error("Monte Carlo estimate too noisy: relative standard error {relative:.3} exceeds {limit:.3}")]
    MonteCarloPrecision { relative: f64, limit: f64 },

    #[error("field {field_g} G lies below the high-field regime ({min_g} G)")]
    FieldRegime { field_g: f64, min_g: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
