use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signature mismatch: {0}")]
    SignatureMismatch(String),

    #[error("structure is not fully labeled: {0}")]
    NotFullyLabeled(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("variable lists do not match: {0}")]
    VarMismatch(String),

    #[error("shape violation: {0}")]
    Shape(String),

    #[error("arity mismatch: {0}")]
    ArityMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("stabilization guard tripped: {0}")]
    StabilizationGuard(String),

    #[error("no suitable bijection in pool for operation {index}")]
    NoSuitableBijection { index: usize },

    #[error("a quasi Jónsson chain must have odd length, got {0}")]
    OddLengthRequired(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("engine invariant broken: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
