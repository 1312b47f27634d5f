use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("negative time interval: s = {s}, t = {t}")]
    NegativeInterval { s: f64, t: f64 },

    #[error("bridge time {tau} outside ({s}, {t})")]
    BridgeTime { s: f64, tau: f64, t: f64 },

    #[error("covariance not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("intensity {value} is negative or non-finite at state {state:?}")]
    BadIntensity { value: f64, state: Vec<f64> },

    #[error("non-finite weight at step {step}, particle {particle}, state {state:?}")]
    NonFiniteWeight {
        step: usize,
        particle: usize,
        state: Vec<f64>,
    },

    #[error("all weights are zero")]
    ZeroWeights,

    #[error("{what} exceeded its cap of {cap}")]
    CapExceeded { what: &'static str, cap: u64 },

    #[error("no step size in [{lo:e}, {hi:e}] satisfies the negative-estimate budget")]
    NoFeasibleStep { lo: f64, hi: f64 },

    #[error("bound invalid: {0}")]
    InvalidBound(String),

    #[error("quadrature did not converge (change {change:e} on resolution doubling)")]
    NotConverged { change: f64 },

    #[error("model not supported here: {0}")]
    Unsupported(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("dominating rate violated: intensity {value} > {lambda_max} at t = {t}")]
    DominatingRate { value: f64, lambda_max: f64, t: f64 },

    #[error("zero-variance series")]
    ZeroVariance,

    #[error("model fit: {0}")]
    Fit(String),

    #[error("likelihood backend failed at iteration {iteration}: {source}")]
    Backend {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput(msg()))
    }
}
