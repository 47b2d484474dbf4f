//! The end-to-end prediction model: mixed models for the markers, their
//! predicted random effects as covariates, and a penalized Cox model on
//! top. The baseline comparator uses each subject's first measurements.

use crate::cox::{fit_penalized_cox, nested_cv, predict_lp, survival_from_lp, Covariates, LambdaChoice, NestedCvReport, PenalizedCoxFit, PenaltyConfig};
use crate::data::{Study, SurvivalOutcome};
use crate::error::{Error, Result};
use crate::metrics::MetricRequest;
use crate::mixed::{build_ranef_summary, fit_mixed_models, MixedModels, OptimConfig, RanefFlag, RanefVariant};
use serde::{Deserialize, Serialize};

pub const AGE_COLUMN: &str = "age";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Penalized Cox on the first-visit value of every item.
    BaselinePcox,
    /// One LMM per item; intercepts and slopes as covariates.
    PrcLmm,
    /// One MLPMM per process; shared effects as covariates.
    PrcMlpmmU,
    /// As `PrcMlpmmU` plus the item-specific intercepts.
    PrcMlpmmUb,
}

impl Variant {
    fn ranef(&self) -> Option<RanefVariant> {
        match self {
            Variant::BaselinePcox => None,
            Variant::PrcLmm => Some(RanefVariant::Lmm),
            Variant::PrcMlpmmU => Some(RanefVariant::MlpmmU),
            Variant::PrcMlpmmUb => Some(RanefVariant::MlpmmUb),
        }
    }
}

/// Whether baseline age enters the Cox model (always unpenalized).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgePolicy {
    /// Only when baseline ages differ between training subjects.
    Auto,
    Include,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub variant: Variant,
    /// `penalty_factors` is ignored: age is unpenalized and every other
    /// column has factor 1.
    pub penalty: PenaltyConfig,
    /// When set, `α` is chosen from this grid by nested cross-validation
    /// instead of taken from `penalty.alpha`.
    pub alpha_grid: Option<Vec<f64>>,
    pub age: AgePolicy,
    pub mixed: OptimConfig,
    /// Fail instead of continuing when a mixed model does not converge.
    pub require_convergence: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variant: Variant::PrcLmm,
            penalty: PenaltyConfig::default(),
            alpha_grid: None,
            age: AgePolicy::Auto,
            mixed: OptimConfig::default(),
            require_convergence: false,
        }
    }
}

/// The default `α` grid `0, 0.1, …, 1`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// Summary of the nested cross-validation over `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub grid: Vec<f64>,
    pub outer_deviance: Vec<f64>,
    pub alpha: f64,
}

impl From<&NestedCvReport> for AlphaSelection {
    fn from(r: &NestedCvReport) -> Self {
        AlphaSelection {
            grid: r.alpha_grid.clone(),
            outer_deviance: r.outer_deviance.clone(),
            alpha: r.alpha,
        }
    }
}

/// A fitted prediction model, self-contained for scoring new subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrcModel {
    pub variant: Variant,
    pub items: Vec<String>,
    pub include_age: bool,
    pub mixed: Option<MixedModels>,
    /// Training means used for items missing at a subject's first visit
    /// (baseline comparator only).
    pub baseline_fill: Option<Vec<f64>>,
    pub cox: PenalizedCoxFit,
    pub alpha_selection: Option<AlphaSelection>,
    pub n_nonconverged: usize,
}

/// Covariates of `study` plus per-subject flags (empty for the baseline comparator).
pub struct Design {
    pub x: Covariates,
    pub flags: Vec<Vec<RanefFlag>>,
}

fn first_values(study: &Study) -> Vec<Vec<Option<f64>>> {
    let data = &study.longitudinal;
    (0..data.n_subjects())
        .map(|i| {
            let v = data.visits(i);
            (0..data.n_items()).map(|q| if v.n_visits() > 0 { v.value(0, q) } else { None }).collect()
        })
        .collect()
}

fn baseline_fill(study: &Study) -> Vec<f64> {
    let first = first_values(study);
    (0..study.longitudinal.n_items())
        .map(|q| {
            let seen: Vec<f64> = first.iter().filter_map(|r| r[q]).collect();
            if seen.is_empty() {
                0.0
            } else {
                seen.iter().sum::<f64>() / seen.len() as f64
            }
        })
        .collect()
}

fn design(
    study: &Study,
    variant: Variant,
    mixed: Option<&MixedModels>,
    fill: Option<&[f64]>,
    include_age: bool,
) -> Result<Design> {
    let n = study.n_subjects();
    let (mut names, mut columns, flags) = match variant.ranef() {
        None => {
            let fill = fill.ok_or_else(|| Error::Config("baseline comparator without fill values".into()))?;
            let first = first_values(study);
            let cols: Vec<Vec<f64>> = (0..study.longitudinal.n_items())
                .map(|q| first.iter().map(|r| r[q].unwrap_or(fill[q])).collect())
                .collect();
            (study.item_map.items().to_vec(), cols, Vec::new())
        }
        Some(rv) => {
            let models = mixed.ok_or_else(|| Error::Config("random-effect variant without mixed models".into()))?;
            let summary = build_ranef_summary(models, &study.item_map, &study.longitudinal, rv)?;
            let cols = (0..summary.n_cols()).map(|j| summary.matrix.iter().map(|r| r[j]).collect()).collect();
            (summary.columns, cols, summary.flags)
        }
    };
    if include_age {
        names.insert(0, AGE_COLUMN.to_string());
        columns.insert(0, study.survival.records().iter().map(|r| r.baseline_age).collect());
    }
    Ok(Design {
        x: Covariates::new(names, columns, n)?,
        flags,
    })
}

/// Fits the full pipeline on `study`.
pub fn fit_prc(study: &Study, config: &PipelineConfig) -> Result<PrcModel> {
    let variant = config.variant;
    let include_age = match config.age {
        AgePolicy::Auto => study.baseline_age_varies(),
        AgePolicy::Include => true,
        AgePolicy::Exclude => false,
    };
    let mixed = match variant.ranef() {
        None => None,
        Some(rv) => Some(fit_mixed_models(&study.longitudinal, &study.item_map, rv == RanefVariant::Lmm, &config.mixed)?),
    };
    let n_nonconverged = mixed.as_ref().map_or(0, |m| m.n_nonconverged());
    if n_nonconverged > 0 {
        if config.require_convergence {
            return Err(Error::NotConverged(n_nonconverged));
        }
        log::warn!("{n_nonconverged} mixed-model fits did not converge");
    }
    let fill = (variant == Variant::BaselinePcox).then(|| baseline_fill(study));
    let d = design(study, variant, mixed.as_ref(), fill.as_deref(), include_age)?;
    let mut penalty = config.penalty.clone();
    penalty.penalty_factors = d.x.names.iter().map(|n| if n == AGE_COLUMN && include_age { 0.0 } else { 1.0 }).collect();
    let surv = study.survival.outcome();
    let mut alpha_selection = None;
    if let Some(grid) = &config.alpha_grid {
        let report = nested_cv(&d.x, &surv, grid, penalty.folds, penalty.seed, &penalty)?;
        penalty.alpha = report.alpha;
        if penalty.lambda != LambdaChoice::Auto {
            log::info!("alpha chosen by nested cross-validation; lambda stays fixed");
        }
        alpha_selection = Some(AlphaSelection::from(&report));
    }
    let cox = fit_penalized_cox(&d.x, &surv, &penalty)?;
    Ok(PrcModel {
        variant,
        items: study.item_map.items().to_vec(),
        include_age,
        mixed,
        baseline_fill: fill,
        cox,
        alpha_selection,
        n_nonconverged,
    })
}

/// Value of one metric, or why it is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub request: MetricRequest,
    pub label: String,
    pub value: Option<f64>,
    pub error: Option<String>,
}

impl PrcModel {
    /// Covariates of `study` built with this model's step-1 fits.
    pub fn design(&self, study: &Study) -> Result<Design> {
        if study.item_map.items() != self.items.as_slice() {
            return Err(Error::Config("items differ from the training data".into()));
        }
        design(study, self.variant, self.mixed.as_ref(), self.baseline_fill.as_deref(), self.include_age)
    }

    pub fn linear_predictor(&self, study: &Study) -> Result<Vec<f64>> {
        Ok(predict_lp(&self.cox, &self.design(study)?.x)?)
    }

    /// Predicted survival of every subject of `study` at `times`.
    pub fn survival_curves(&self, study: &Study, times: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(survival_from_lp(&self.cox, &self.linear_predictor(study)?, times))
    }

    /// Number of penalized predictors (every column except age).
    pub fn n_penalized(&self) -> usize {
        self.cox.penalty_factors.iter().filter(|&&f| f > 0.0).count()
    }

    pub fn n_predictors(&self) -> usize {
        self.cox.columns.len()
    }

    /// Evaluates `metrics` on `study`. Undefined metrics are reported, not raised.
    pub fn score(&self, study: &Study, metrics: &[MetricRequest]) -> Result<Vec<MetricValue>> {
        let lp = self.linear_predictor(study)?;
        Ok(score_lp(&lp, &study.survival.outcome(), metrics))
    }
}

/// Evaluates `metrics` for scores `lp` against observed outcomes.
pub fn score_lp(lp: &[f64], surv: &SurvivalOutcome, metrics: &[MetricRequest]) -> Vec<MetricValue> {
    metrics
        .iter()
        .map(|m| {
            let r = m.evaluate(lp, surv);
            MetricValue {
                request: *m,
                label: m.label(),
                value: r.as_ref().ok().copied(),
                error: r.err().map(|e| e.to_string()),
            }
        })
        .collect()
}
