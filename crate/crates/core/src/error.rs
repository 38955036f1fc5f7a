use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters: grid sizes, potential parameters, normalization.
    #[error("configuration error: {0}")]
    Config(String),

    /// The potential violates a standing assumption that the computation needs.
    #[error("assumption violated: {0}")]
    Assumption(String),

    /// Non-finite or negative samples where a density was expected.
    #[error("invalid data: {0}")]
    Data(String),

    #[error("value out of range: {0}")]
    Range(String),

    /// Input outside the domain of a functional (e.g. a density with zero cells).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("time step rejected {halvings} times at t = {t}: positivity lost")]
    Stiffness { t: f64, halvings: u32 },

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("decay fit failed: {0}")]
    Fit(String),

    /// An outcome that is mathematically impossible; signals a bug.
    #[error("inconsistency: {0}")]
    Inconsistency(String),
}
