//! The run configuration: one TOML document shared by every subcommand.

use crate::error::CliError;
use prc::metrics::MetricRequest;
use prc::pipeline::PipelineConfig;
use prc::simulation::{Design, ScenarioSpec};
use prc::validation::BootstrapPlan;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    /// Master seed for cross-validation folds, bootstrap and simulation.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: Option<DataPaths>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default = "MetricRequest::default_set")]
    pub metrics: Vec<MetricRequest>,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    #[serde(default)]
    pub simulation: Option<SimulationSettings>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            data: None,
            pipeline: PipelineConfig::default(),
            metrics: MetricRequest::default_set(),
            bootstrap: BootstrapSettings::default(),
            simulation: None,
        }
    }
}

/// Input files. Relative paths are read from the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub longitudinal: PathBuf,
    pub survival: PathBuf,
    pub item_map: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub max_failure_fraction: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        let plan = BootstrapPlan::default();
        BootstrapSettings {
            replicates: plan.replicates,
            max_failure_fraction: plan.max_failure_fraction,
        }
    }
}

/// Either a predefined scenario or a full custom specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    #[serde(default)]
    pub scenario: Option<u32>,
    #[serde(default = "default_sim_n")]
    pub n: usize,
    /// Visit designs to generate for a predefined scenario.
    #[serde(default = "default_designs")]
    pub designs: Vec<Design>,
    #[serde(default)]
    pub spec: Option<ScenarioSpec>,
}

fn default_sim_n() -> usize {
    300
}

fn default_designs() -> Vec<Design> {
    vec![Design::Few, Design::Many]
}

impl SimulationSettings {
    /// The specifications to generate, one per design.
    pub fn specs(&self) -> Result<Vec<ScenarioSpec>, CliError> {
        match (&self.spec, self.scenario) {
            (Some(spec), None) => Ok(vec![spec.clone()]),
            (None, Some(id)) => self
                .designs
                .iter()
                .map(|&d| ScenarioSpec::scenario(id, self.n, d).map_err(|e| CliError::Config(e.to_string())))
                .collect(),
            _ => Err(CliError::Config("simulation needs exactly one of `scenario` or `spec`".into())),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config: Config =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        if let Some(d) = config.data.as_mut() {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut d.longitudinal, &mut d.survival, &mut d.item_map] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// Applies the master seed everywhere it is used.
    pub fn with_seed(mut self, seed: Option<u64>) -> Config {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.pipeline.penalty.seed = self.seed;
        self
    }

    pub fn data(&self) -> Result<&DataPaths, CliError> {
        self.data.as_ref().ok_or_else(|| CliError::Config("missing [data] section".into()))
    }

    pub fn bootstrap_plan(&self) -> BootstrapPlan {
        BootstrapPlan {
            replicates: self.bootstrap.replicates,
            seed: self.seed,
            max_failure_fraction: self.bootstrap.max_failure_fraction,
            pipeline: self.pipeline.clone(),
        }
    }
}
