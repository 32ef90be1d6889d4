use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Wrong shapes, bad layer sizes, invalid config values. Raised while a
    /// graph or run is being set up, never in the middle of a step.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad runtime argument (option index out of range, malformed key).
    #[error("input error: {0}")]
    Input(String),

    /// API misuse (acting on a terminal state, backward without forward).
    #[error("usage error: {0}")]
    Usage(String),

    /// Layout sampling kept producing unsatisfiable or disconnected grids.
    #[error("layout generation failed: {0}")]
    Generation(String),

    /// Exhaustive search exceeded its node budget.
    #[error("search budget exceeded: visited {visited} nodes (budget {budget})")]
    BudgetExceeded { visited: u64, budget: u64 },

    /// Non-finite loss or parameter detected during training.
    #[error("numeric health violation: {0}")]
    Numeric(String),

    /// Malformed checkpoint, state, or fixture file.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
