use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("net profit condition violated: premium rate {premium_rate} must exceed expected claim {mean_claim}")]
    NetProfit { premium_rate: f64, mean_claim: f64 },

    #[error("reinsurer belief is inconsistent: {0}")]
    InconsistentBelief(String),

    #[error("operation needs a finite likelihood ratio, but the belief is {0}")]
    SingularBelief(&'static str),

    #[error("partition construction failed near y = {at}: {reason}")]
    Partition { at: f64, reason: String },

    #[error("indemnity construction failed: {0}")]
    Construction(String),

    #[error("root not bracketed on [{lo}, {hi}]")]
    NotBracketed { lo: f64, hi: f64 },

    #[error("quadrature did not converge on [{a}, {b}] (achieved error {achieved:e})")]
    Quadrature { a: f64, b: f64, achieved: f64 },

    #[error("discretization check failed: {0}")]
    Discretization(String),

    #[error("time grid too coarse: Richardson disagreement {disagreement:e} exceeds {tolerance:e}")]
    GridTooCoarse { disagreement: f64, tolerance: f64 },

    #[error("strategy covers [{start}, {end}] but simulation needs [{needed_start}, {needed_end}]")]
    Coverage { start: f64, end: f64, needed_start: f64, needed_end: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
