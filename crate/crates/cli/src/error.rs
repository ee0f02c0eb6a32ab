use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("{0}")]
    Failed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<fcme_core::Error> for CliError {
    fn from(e: fcme_core::Error) -> Self {
        use fcme_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::ProblemCheck(_) | E::Misspecified(_) => CliError::Config(e.to_string()),
            E::Diverged { iteration, reason } => CliError::Diverged { iteration, reason },
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Failed(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failed(format!("json: {e}"))
    }
}
