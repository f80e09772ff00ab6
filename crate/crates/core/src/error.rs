use alloc::string::String;

/// Errors raised by the modelling core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter `{name}`: {value}")]
    InvalidParameter { name: String, value: f64 },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("matrix is not positive definite (last jitter tried: {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("objective is not finite at the initial point")]
    NonFiniteObjective,

    #[error("thinning bound still violated after {0} escalations")]
    BoundEscalation(usize),

    #[error("empty dataset")]
    EmptyData,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// True for failures of the numerics (factorisation, optimisation,
    /// sampling) as opposed to malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::NonFiniteObjective | Error::BoundEscalation(_)
        )
    }

    pub(crate) fn invalid(name: &str, value: f64) -> Self {
        Error::InvalidParameter { name: String::from(name), value }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
