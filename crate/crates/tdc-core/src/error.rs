use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("reference tensor has zero Frobenius norm")]
    ZeroNormReference,

    #[error("SVD did not converge")]
    SvdFailed,

    #[error("invalid tiling: {0}")]
    InvalidTiling(String),

    #[error("no valid tiling candidates: {0}")]
    EmptyCandidateSet(String),

    #[error("infeasible budget: {0}")]
    InfeasibleBudget(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("tensor file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
