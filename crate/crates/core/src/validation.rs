//! Cluster-bootstrap optimism correction. Every replicate resamples whole
//! subjects, reruns the full pipeline (mixed models, tuning and Cox fit) on
//! the resample, and scores both the resample and the original data with
//! the replicate's model. The mean gap is subtracted from the naive value.

use crate::data::{DataError, Study};
use crate::error::{Error, Result};
use crate::metrics::MetricRequest;
use crate::pipeline::{fit_prc, MetricValue, PipelineConfig, PrcModel};
use crate::rng::stream_rng;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Offset of the first replicate's random stream under the master seed.
pub const REPLICATE_STREAM_OFFSET: u64 = 10_000;

/// Draws `n` subject indices uniformly with replacement.
pub fn cluster_bootstrap_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapPlan {
    pub replicates: usize,
    pub seed: u64,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_fraction: f64,
    pub pipeline: PipelineConfig,
}

impl Default for BootstrapPlan {
    fn default() -> Self {
        BootstrapPlan {
            replicates: 50,
            seed: 1,
            max_failure_fraction: 0.2,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl BootstrapPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("bootstrap needs at least one replicate".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(Error::Config(format!("max_failure_fraction {}", self.max_failure_fraction)));
        }
        Ok(())
    }
}

/// Metric values of one successful replicate, aligned with the report's metric list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// Random stream of this replicate under the master seed.
    pub stream: u64,
    /// Performance on the resample itself.
    pub apparent: Vec<Option<f64>>,
    /// Performance on the original data.
    pub original: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub stream: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedMetric {
    pub request: MetricRequest,
    pub label: String,
    pub naive: Option<f64>,
    /// Mean of apparent minus original over replicates where both exist.
    pub optimism: Option<f64>,
    pub corrected: Option<f64>,
    pub n_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub replicates: usize,
    pub metrics: Vec<CorrectedMetric>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    replicate: usize,
    metric: &'a str,
    horizon: Option<f64>,
    #[serde(rename = "C_b")]
    apparent: Option<f64>,
    #[serde(rename = "C_0b")]
    original: Option<f64>,
}

impl ValidationReport {
    /// Combines naive values and replicate results. Records are sorted by
    /// replicate index first, so the result does not depend on their order.
    pub fn aggregate(
        seed: u64,
        replicates: usize,
        naive: &[MetricValue],
        mut records: Vec<ReplicateRecord>,
        mut failures: Vec<ReplicateFailure>,
    ) -> ValidationReport {
        records.sort_by_key(|r| r.replicate);
        failures.sort_by_key(|f| f.replicate);
        let metrics = naive
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let gaps: Vec<f64> = records
                    .iter()
                    .filter_map(|r| Some(r.apparent[k]? - r.original[k]?))
                    .collect();
                let optimism = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
                let corrected = match (m.value, optimism) {
                    (Some(v), Some(o)) => Some(v - o),
                    _ => None,
                };
                CorrectedMetric {
                    request: m.request,
                    label: m.label.clone(),
                    naive: m.value,
                    optimism,
                    corrected,
                    n_replicates: gaps.len(),
                }
            })
            .collect();
        ValidationReport {
            seed,
            replicates,
            metrics,
            records,
            failures,
        }
    }

    pub fn metric(&self, request: &MetricRequest) -> Option<&CorrectedMetric> {
        self.metrics.iter().find(|m| &m.request == request)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| io_error(path, source))
    }

    /// One row per replicate and metric: `replicate, metric, horizon, C_b, C_0b`.
    pub fn write_replicates_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(DataError::from)?;
        for r in &self.records {
            for (k, m) in self.metrics.iter().enumerate() {
                let metric = match m.request.metric {
                    crate::metrics::Metric::CIndex => "C",
                    crate::metrics::Metric::Tdauc => "tdAUC",
                };
                w.serialize(CsvRow {
                    replicate: r.replicate,
                    metric,
                    horizon: m.request.horizon,
                    apparent: r.apparent[k],
                    original: r.original[k],
                })
                .map_err(DataError::from)?;
            }
        }
        w.flush().map_err(|source| io_error(path, source))
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Data(DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Resampling rule: subject count and replicate rng to drawn indices.
pub type Resampler = dyn Fn(usize, &mut ChaCha8Rng) -> Vec<usize> + Sync;

/// Fits the pipeline on `study` and corrects its metrics for optimism.
pub fn run_cbocp(study: &Study, plan: &BootstrapPlan, metrics: &[MetricRequest]) -> Result<ValidationReport> {
    plan.validate()?;
    for m in metrics {
        m.validate()?;
    }
    let model = fit_prc(study, &plan.pipeline)?;
    run_cbocp_with(study, &model, plan, metrics, &|n, rng| cluster_bootstrap_sample(n, rng))
}

/// As [`run_cbocp`] for an already fitted `model` and a custom resampler.
/// `model` supplies only the naive values; replicates never touch it.
pub fn run_cbocp_with(
    study: &Study,
    model: &PrcModel,
    plan: &BootstrapPlan,
    metrics: &[MetricRequest],
    resampler: &Resampler,
) -> Result<ValidationReport> {
    plan.validate()?;
    let naive = model.score(study, metrics)?;
    let outcomes: Vec<std::result::Result<ReplicateRecord, ReplicateFailure>> = (0..plan.replicates)
        .into_par_iter()
        .map(|b| run_replicate(study, plan, metrics, resampler, b))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => {
                log::warn!("bootstrap replicate {} failed: {}", f.replicate, f.error);
                failures.push(f);
            }
        }
    }
    if failures.len() as f64 > plan.max_failure_fraction * plan.replicates as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: plan.replicates,
        });
    }
    Ok(ValidationReport::aggregate(plan.seed, plan.replicates, &naive, records, failures))
}

fn run_replicate(
    study: &Study,
    plan: &BootstrapPlan,
    metrics: &[MetricRequest],
    resampler: &Resampler,
    b: usize,
) -> std::result::Result<ReplicateRecord, ReplicateFailure> {
    let stream = REPLICATE_STREAM_OFFSET + b as u64;
    let mut rng = stream_rng(plan.seed, stream);
    let draws = resampler(study.n_subjects(), &mut rng);
    let mut config = plan.pipeline.clone();
    config.penalty.seed = rng.next_u64();
    let fit = || -> Result<ReplicateRecord> {
        let boot = study.resample(&draws);
        let model = fit_prc(&boot, &config)?;
        let values = |v: Vec<MetricValue>| v.into_iter().map(|m| m.value).collect();
        Ok(ReplicateRecord {
            replicate: b,
            stream,
            apparent: values(model.score(&boot, metrics)?),
            original: values(model.score(study, metrics)?),
        })
    };
    fit().map_err(|e| ReplicateFailure {
        replicate: b,
        stream,
        error: e.to_string(),
    })
}
