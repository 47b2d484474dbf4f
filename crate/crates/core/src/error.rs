use crate::cox::CoxError;
use crate::data::DataError;
use crate::metrics::MetricError;
use crate::mixed::MixedModelError;
use crate::simulation::SimulationError;
use thiserror::Error;

/// Any failure of the pipeline, tagged with the stage that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("mixed models: {0}")]
    Mixed(#[from] MixedModelError),
    #[error("penalized cox: {0}")]
    Cox(#[from] CoxError),
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
    #[error("simulation: {0}")]
    Simulation(#[from] SimulationError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("mixed models: {0} fits did not converge")]
    NotConverged(usize),
    #[error("validation: {failed} of {total} bootstrap replicates failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl Error {
    /// True for failures of numerical convergence or of the bootstrap
    /// failure ceiling, as opposed to invalid input.
    pub fn is_convergence(&self) -> bool {
        matches!(self, Error::NotConverged(_) | Error::TooManyFailures { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
