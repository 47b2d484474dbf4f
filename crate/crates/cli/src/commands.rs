use crate::config::{Config, SimulationSettings, SCHEMA_VERSION};
use crate::error::CliError;
use crate::output::{self, join};
use crate::Common;
use prc::cox::{predict_lp, survival_from_lp};
use prc::data::{ItemMap, LongitudinalDataset, Study, SubjectId, SurvivalDataset, SurvivalRecord};
use prc::metrics::kaplan_meier;
use prc::pipeline::{fit_prc, score_lp, MetricValue, PrcModel};
use prc::simulation::generate_study;
use prc::validation::run_cbocp;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Everything needed to score new subjects, plus the resolved configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bundle {
    pub schema_version: u32,
    pub config: Config,
    pub item_map: ItemMap,
    pub model: PrcModel,
    pub naive_metrics: Vec<MetricValue>,
}

impl Bundle {
    fn load(path: &Path) -> Result<Bundle, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let b: Bundle = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if b.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!("bundle schema_version {} not supported", b.schema_version)));
        }
        Ok(b)
    }
}

fn load_config(common: &Common, required: bool) -> Result<Config, CliError> {
    let config = match &common.config {
        Some(p) => Config::load(p)?,
        None if required => return Err(CliError::Config("--config is required".into())),
        None => Config::default(),
    };
    Ok(config.with_seed(common.seed))
}

fn load_study(config: &Config) -> Result<Study, CliError> {
    let d = config.data()?;
    Ok(Study::load(&d.longitudinal, &d.survival, &d.item_map)?)
}

fn subject_names(study: &Study) -> Vec<String> {
    study.survival.records().iter().map(|r| r.subject.to_string()).collect()
}

pub fn fit(common: &Common) -> Result<(), CliError> {
    let config = load_config(common, true)?;
    let study = load_study(&config)?;
    let model = fit_prc(&study, &config.pipeline)?;
    let naive = model.score(&study, &config.metrics)?;
    output::ensure_dir(&common.out_dir)?;
    output::write_metrics_csv(&join(&common.out_dir, "metrics.csv"), &naive)?;
    output::write_json(&join(&common.out_dir, "metrics.json"), &naive)?;
    let bundle = Bundle {
        schema_version: SCHEMA_VERSION,
        config,
        item_map: study.item_map.clone(),
        model,
        naive_metrics: naive,
    };
    output::write_json(&join(&common.out_dir, "model.json"), &bundle)
}

#[derive(Deserialize)]
struct SubjectRow {
    subject: String,
    baseline_age: f64,
    #[serde(default)]
    time: Option<f64>,
    #[serde(default)]
    status: Option<u8>,
}

/// Reads new subjects; without follow-up the time is left open-ended.
fn load_subjects(path: &Path) -> Result<SurvivalDataset, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for row in reader.deserialize::<SubjectRow>() {
        let row = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        records.push(SurvivalRecord {
            subject: SubjectId::new(row.subject)?,
            baseline_age: row.baseline_age,
            time: row.time.unwrap_or(f64::MAX),
            status: row.status == Some(1),
        });
    }
    Ok(SurvivalDataset::from_records(records)?)
}

fn parse_times(times: Option<&str>) -> Result<Vec<f64>, CliError> {
    let Some(text) = times else {
        return Ok((1..=10).map(|k| 0.5 * k as f64).collect());
    };
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<f64>() {
            Ok(t) if t.is_finite() && t >= 0.0 => Ok(t),
            _ => Err(CliError::Config(format!("bad prediction time `{s}`"))),
        })
        .collect()
}

pub fn predict(common: &Common, model: &Path, longitudinal: &Path, subjects: &Path, times: Option<&str>) -> Result<(), CliError> {
    let bundle = Bundle::load(model)?;
    let times = parse_times(times)?;
    let survival = load_subjects(subjects)?;
    let ids = survival.records().iter().map(|r| r.subject.clone());
    let longit = LongitudinalDataset::load(longitudinal, &bundle.item_map)?.with_subjects(ids);
    let study = Study::align(longit, survival, bundle.item_map.clone())?;
    let design = bundle.model.design(&study)?;
    let lp = predict_lp(&bundle.model.cox, &design.x).map_err(prc::error::Error::from)?;
    let curves = survival_from_lp(&bundle.model.cox, &lp, &times);
    let units: Vec<String> = bundle
        .model
        .mixed
        .as_ref()
        .map(|m| m.units.iter().map(|u| u.name.clone()).collect())
        .unwrap_or_default();
    let names = subject_names(&study);
    output::ensure_dir(&common.out_dir)?;
    output::write_predictions_csv(&join(&common.out_dir, "predictions.csv"), &names, &lp, &units, &design.flags)?;
    output::write_survival_csv(&join(&common.out_dir, "survival.csv"), &names, &times, &curves)
}

pub fn validate(common: &Common) -> Result<(), CliError> {
    let config = load_config(common, true)?;
    let study = load_study(&config)?;
    let report = run_cbocp(&study, &config.bootstrap_plan(), &config.metrics)?;
    output::ensure_dir(&common.out_dir)?;
    output::write_json(&join(&common.out_dir, "config.json"), &config)?;
    output::write_corrected_csv(&join(&common.out_dir, "corrected.csv"), &report)?;
    report.write_json(join(&common.out_dir, "validation.json"))?;
    report.write_replicates_csv(join(&common.out_dir, "replicates.csv"))?;
    Ok(())
}

pub fn simulate(common: &Common, scenario: Option<u32>, n: Option<usize>) -> Result<(), CliError> {
    let config = load_config(common, false)?;
    let mut settings = match (scenario, config.simulation.clone()) {
        (Some(id), Some(mut s)) => {
            s.scenario = Some(id);
            s.spec = None;
            s
        }
        (Some(id), None) => SimulationSettings {
            scenario: Some(id),
            n: 300,
            designs: vec![prc::simulation::Design::Few, prc::simulation::Design::Many],
            spec: None,
        },
        (None, Some(s)) => s,
        (None, None) => return Err(CliError::Config("give --scenario or a [simulation] section".into())),
    };
    if let Some(n) = n {
        settings.n = n;
        if let Some(spec) = settings.spec.as_mut() {
            spec.n = n;
        }
    }
    output::ensure_dir(&common.out_dir)?;
    for spec in settings.specs()? {
        let sim = generate_study(&spec, config.seed)?;
        let dir = join(&common.out_dir, &format!("{:?}", spec.design).to_lowercase());
        output::ensure_dir(&dir)?;
        sim.study.longitudinal.write(join(&dir, "longitudinal.csv"))?;
        sim.study.survival.write(join(&dir, "survival.csv"))?;
        sim.study.item_map.write(join(&dir, "item_map.csv"))?;
        output::write_json(&join(&dir, "truth.json"), &sim.truth)?;
    }
    Ok(())
}

fn load_scores(path: &Path, survival: &SurvivalDataset) -> Result<Vec<f64>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        subject: String,
        score: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut by_id = HashMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if by_id.insert(row.subject.clone(), row.score).is_some() {
            return Err(CliError::Config(format!("duplicate score for subject {}", row.subject)));
        }
    }
    survival
        .records()
        .iter()
        .map(|r| {
            by_id
                .get(r.subject.as_str())
                .copied()
                .ok_or_else(|| CliError::Config(format!("no score for subject {}", r.subject)))
        })
        .collect()
}

pub fn evaluate(
    common: &Common,
    survival: &Path,
    model: Option<&Path>,
    longitudinal: Option<&Path>,
    scores: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(common, false)?;
    let surv = SurvivalDataset::load(survival)?;
    let (lp, outcome) = match (model, longitudinal, scores) {
        (Some(m), Some(l), None) => {
            let bundle = Bundle::load(m)?;
            let longit = LongitudinalDataset::load(l, &bundle.item_map)?;
            let study = Study::align(longit, surv, bundle.item_map.clone())?;
            (bundle.model.linear_predictor(&study)?, study.survival.outcome())
        }
        (None, _, Some(s)) => (load_scores(s, &surv)?, surv.outcome()),
        _ => return Err(CliError::Config("give either --model with --longitudinal, or --scores".into())),
    };
    let metrics = match (&common.config, model) {
        (None, Some(m)) => Bundle::load(m)?.config.metrics,
        _ => config.metrics.clone(),
    };
    let values = score_lp(&lp, &outcome, &metrics);
    output::ensure_dir(&common.out_dir)?;
    output::write_metrics_csv(&join(&common.out_dir, "metrics.csv"), &values)?;
    output::write_json(&join(&common.out_dir, "metrics.json"), &values)?;
    output::write_km_csv(&join(&common.out_dir, "km.csv"), &kaplan_meier(&outcome))
}

