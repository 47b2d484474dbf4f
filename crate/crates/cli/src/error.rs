use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] prc::error::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("output: {0}")]
    Output(String),
    #[error("{0}")]
    Usage(String),
    /// Help or version text requested; not a failure.
    #[error("{0}")]
    Help(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 3 for convergence failures and a breached failure ceiling, 2 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_convergence() => 3,
            _ => 2,
        }
    }
}

impl From<prc::data::DataError> for CliError {
    fn from(e: prc::data::DataError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<prc::simulation::SimulationError> for CliError {
    fn from(e: prc::simulation::SimulationError) -> Self {
        CliError::Core(e.into())
    }
}
