use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no observations: the plug-in estimate needs at least one logged action")]
    NoData,

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("no follower action admits a feasible leader strategy")]
    Infeasible,

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("boundary: {0}")]
    OnBoundary(String),

    #[error("malformed input: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input, as opposed to a numerical
    /// failure inside a solver.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Infeasible | Error::Singular(_) | Error::BudgetExceeded(_)
        )
    }
}
