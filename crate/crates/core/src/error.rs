use thiserror::Error;

/// Errors produced by the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters, mismatched dimensions, or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data that cannot be processed (non-finite values, wrong shape).
    #[error("input error: {0}")]
    Input(String),

    /// A state exceeded the blow-up bound (or became non-finite) during integration.
    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    /// The integrator ran out of steps or its step size underflowed.
    #[error("integration stalled at t = {time}: {reason}")]
    Stalled { time: f64, reason: String },

    /// Relative noise requested on a trajectory whose mean square is zero.
    #[error("cannot scale relative noise on an all-zero signal")]
    DegenerateSignal,

    /// A factorization that should succeed did not.
    #[error("numerical failure (rho = {rho}): {reason}")]
    Numerical { rho: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
