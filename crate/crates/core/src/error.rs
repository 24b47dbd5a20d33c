use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("non-finite value produced at `{layer}`")]
    NonFinite { layer: String },

    #[error("non-finite input value at index {index}")]
    NonFiniteInput { index: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(
        "jacobian needs {needed} entries but the budget is {budget}; use the approximated path"
    )]
    OverBudget { needed: usize, budget: usize },

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown feature tap `{0}`")]
    UnknownTap(String),
}
