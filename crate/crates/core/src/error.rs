use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A parameter became non-finite or left the divergence guard.
    #[error("diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("problem check failed: {0}")]
    ProblemCheck(String),

    #[error("missing ground truth: {0}")]
    MissingOracle(&'static str),

    #[error("mis-specified model: {0}")]
    Misspecified(String),

    #[error("w2_exact supports at most {cap} points (got {n}); use w2_sliced")]
    OverCap { n: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
