use thiserror::Error;

/// Failures surfaced by the command-line driver, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] interpole::Error),

    #[error("{0}")]
    Usage(String),

    #[error("fit stopped after {iterations} iterations without converging (outputs were still written)")]
    NotConverged { iterations: usize },
}

impl CliError {
    /// 1 usage/IO, 2 non-convergence, 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::NotConverged { .. } => 2,
            CliError::Core(e) => match e.root() {
                interpole::Error::NonFiniteValue { .. } | interpole::Error::ZeroLikelihood { .. } => 3,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
