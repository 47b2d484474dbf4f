//! File writers. Every table is plain CSV with a header row.

use crate::error::CliError;
use prc::metrics::{KaplanMeier, Metric};
use prc::mixed::RanefFlag;
use prc::pipeline::MetricValue;
use prc::validation::ValidationReport;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::CIndex => "C",
        Metric::Tdauc => "tdAUC",
    }
}

#[derive(Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    horizon: Option<f64>,
    tau: Option<f64>,
    value: Option<f64>,
    flag: &'a str,
}

pub fn write_metrics_csv(path: &Path, values: &[MetricValue]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    for v in values {
        w.serialize(MetricRow {
            metric: metric_name(v.request.metric),
            horizon: v.request.horizon,
            tau: v.request.tau,
            value: v.value,
            flag: v.error.as_deref().unwrap_or(""),
        })?;
    }
    finish(w, path)
}

#[derive(Serialize)]
struct CorrectedRow<'a> {
    metric: &'a str,
    horizon: Option<f64>,
    naive: Option<f64>,
    optimism: Option<f64>,
    corrected: Option<f64>,
    replicates: usize,
}

pub fn write_corrected_csv(path: &Path, report: &ValidationReport) -> Result<(), CliError> {
    let mut w = writer(path)?;
    for m in &report.metrics {
        w.serialize(CorrectedRow {
            metric: metric_name(m.request.metric),
            horizon: m.request.horizon,
            naive: m.naive,
            optimism: m.optimism,
            corrected: m.corrected,
            replicates: m.n_replicates,
        })?;
    }
    finish(w, path)
}

pub fn write_km_csv(path: &Path, km: &KaplanMeier) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["time", "n_risk", "n_event", "n_censor", "survival"])?;
    for k in 0..km.times.len() {
        w.write_record([
            km.times[k].to_string(),
            km.n_risk[k].to_string(),
            km.n_event[k].to_string(),
            km.n_censor[k].to_string(),
            km.survival[k].to_string(),
        ])?;
    }
    finish(w, path)
}

/// Long format: one row per subject and time.
pub fn write_survival_csv(path: &Path, subjects: &[String], times: &[f64], curves: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["subject", "time", "survival"])?;
    for (s, curve) in subjects.iter().zip(curves) {
        for (t, v) in times.iter().zip(curve) {
            w.write_record([s.clone(), t.to_string(), v.to_string()])?;
        }
    }
    finish(w, path)
}

fn flag_name(f: RanefFlag) -> &'static str {
    match f {
        RanefFlag::Observed => "observed",
        RanefFlag::SingleVisit => "single_visit",
        RanefFlag::PriorMean => "prior_mean",
    }
}

/// Linear predictor per subject, with the modelling units whose random
/// effects were not fully observed.
pub fn write_predictions_csv(
    path: &Path,
    subjects: &[String],
    lp: &[f64],
    units: &[String],
    flags: &[Vec<RanefFlag>],
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record(["subject", "lp", "flags"])?;
    for (i, s) in subjects.iter().enumerate() {
        let noted: Vec<String> = flags
            .get(i)
            .map(|row| {
                row.iter()
                    .zip(units)
                    .filter(|(f, _)| **f != RanefFlag::Observed)
                    .map(|(f, u)| format!("{u}:{}", flag_name(*f)))
                    .collect()
            })
            .unwrap_or_default();
        w.write_record([s.clone(), lp[i].to_string(), noted.join(";")])?;
    }
    finish(w, path)
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
