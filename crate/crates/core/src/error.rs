use thiserror::Error;

/// Errors raised by the solver suite.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected} cells, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("steady solver did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("invalid bracket [{lo}, {hi}]: Psi(x) - x has the same sign ({f_lo:.4e}, {f_hi:.4e}) at both ends")]
    InvalidBracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("negative density {value:.3e} at cell ({i}, {j}) after step at t = {t}; reduce dt")]
    Unstable {
        t: f64,
        i: usize,
        j: usize,
        value: f64,
    },

    #[error("rate fit needs at least {needed} positive samples in window, found {found}")]
    InsufficientSamples { needed: usize, found: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
