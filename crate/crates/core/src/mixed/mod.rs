//! Step 1 and step 2 of the calibration pipeline: maximum-likelihood mixed
//! models for the longitudinal items and predicted random effects.
//!
//! Two model families are supported. The LMM models a single item with a
//! correlated random intercept and slope; the MLPMM models the `r_s ≥ 2`
//! items of one latent process jointly, with a shared intercept/slope pair
//! and an item-specific random intercept per item. Both are fitted by BFGS
//! on the marginal likelihood with the fixed effects profiled out by GLS.

pub(crate) mod gaussian;
mod lmm;
mod mlpmm;
pub(crate) mod optim;
mod summary;

pub use lmm::{fit_lmm, lmm_loglik, lmm_loglik_unconstrained, predict_ranef_lmm, LmmFit, LmmParams};
pub use mlpmm::{
    fit_mlpmm, mlpmm_loglik, mlpmm_loglik_unconstrained, predict_ranef_mlpmm, MlpmmFit, MlpmmItem,
    MlpmmParams,
};
pub use optim::OptimConfig;
pub use summary::{build_ranef_summary, fit_mixed_models, MixedModels, ProcessFit, RanefSummary, RanefVariant, UnitFit};

use crate::data::LongitudinalDataset;
use gaussian::{ItemObs, SubjectObs};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound added to every residual variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MixedModelError {
    #[error("item `{0}` has no observations")]
    NoObservations(String),
    #[error("need at least 2 subjects with observations, got {0}")]
    TooFewSubjects(usize),
    #[error("degenerate design for `{0}`: all ages are equal")]
    DegenerateDesign(String),
    #[error("slope variance of `{0}` is unidentifiable: no subject has two distinct visit ages")]
    InsufficientRepeats(String),
    #[error("covariance matrix is not positive semi-definite: {0}")]
    NotPsd(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure in `{0}`: covariance not positive definite")]
    Numerical(String),
    #[error("fit for process `{0}` is missing")]
    MissingFit(String),
    #[error("process `{0}` has a single item; use the LMM")]
    TooFewItems(String),
}

/// One subject's observations: for every modelled item, its non-missing
/// `(age, value)` pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubjectData {
    pub items: Vec<Vec<(f64, f64)>>,
}

impl SubjectData {
    /// Single-item subject, as used by the LMM.
    pub fn single(pairs: Vec<(f64, f64)>) -> Self {
        SubjectData { items: vec![pairs] }
    }

    pub(crate) fn to_obs(&self) -> SubjectObs {
        SubjectObs {
            items: self
                .items
                .iter()
                .enumerate()
                .filter(|(_, pairs)| !pairs.is_empty())
                .map(|(q, pairs)| {
                    ItemObs::new(q, pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
                })
                .collect(),
        }
    }
}

/// Extracts the given item columns for every subject of `data`, in subject order.
pub fn observations(data: &LongitudinalDataset, items: &[usize]) -> Vec<SubjectData> {
    (0..data.n_subjects())
        .map(|i| {
            let v = data.visits(i);
            SubjectData {
                items: items.iter().map(|&q| v.series(q).collect()).collect(),
            }
        })
        .collect()
}

/// How a prediction was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RanefFlag {
    /// At least two distinct visit ages.
    Observed,
    /// One visit age only: the slope is pure shrinkage toward zero.
    SingleVisit,
    /// No observation at all: the prior mean (zero) is returned.
    PriorMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RanefPrediction {
    pub values: Vec<f64>,
    pub flag: RanefFlag,
}

pub(crate) fn flag_for(obs: &SubjectObs) -> RanefFlag {
    match obs.distinct_ages() {
        0 => RanefFlag::PriorMean,
        1 => RanefFlag::SingleVisit,
        _ => RanefFlag::Observed,
    }
}

/// Pooled OLS of value on age for one item: `(beta, residual variance, age variance)`.
pub(crate) fn pooled_ols(subjects: &[SubjectObs], item: usize) -> Option<([f64; 2], f64, f64)> {
    let (mut n, mut sa, mut saa, mut sy, mut say) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in subjects {
        for it in s.items.iter().filter(|it| it.item == item) {
            for (&a, &y) in it.ages.iter().zip(&it.values) {
                n += 1.0;
                sa += a;
                saa += a * a;
                sy += y;
                say += a * y;
            }
        }
    }
    if n < 1.0 {
        return None;
    }
    let mean_a = sa / n;
    let var_a = (saa / n - mean_a * mean_a).max(0.0);
    let b1 = if var_a > 0.0 {
        (say / n - mean_a * sy / n) / var_a
    } else {
        0.0
    };
    let b0 = sy / n - b1 * mean_a;
    let mut rss = 0.0;
    for s in subjects {
        for it in s.items.iter().filter(|it| it.item == item) {
            for (&a, &y) in it.ages.iter().zip(&it.values) {
                rss += (y - b0 - b1 * a).powi(2);
            }
        }
    }
    let v = (rss / n).max(1e-6);
    Some(([b0, b1], v, var_a))
}

/// Common pre-fit checks for the items `names` of `subjects`.
pub(crate) fn check_design(subjects: &[SubjectObs], names: &[String]) -> Result<(), MixedModelError> {
    for (q, name) in names.iter().enumerate() {
        let mut ages: Vec<f64> = subjects
            .iter()
            .flat_map(|s| s.items.iter().filter(|it| it.item == q).flat_map(|it| it.ages.iter().copied()))
            .collect();
        if ages.is_empty() {
            return Err(MixedModelError::NoObservations(name.clone()));
        }
        ages.sort_by(f64::total_cmp);
        if ages.first() == ages.last() {
            return Err(MixedModelError::DegenerateDesign(name.clone()));
        }
    }
    let active = subjects.iter().filter(|s| !s.is_empty()).count();
    if active < 2 {
        return Err(MixedModelError::TooFewSubjects(active));
    }
    if !subjects.iter().any(|s| s.distinct_ages() >= 2) {
        return Err(MixedModelError::InsufficientRepeats(names.join("+")));
    }
    Ok(())
}

/// Square root `Λ` (lower triangular) of a 2×2 PSD matrix.
pub(crate) fn psd_sqrt2(m: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2], MixedModelError> {
    let [[a, b], [b2, c]] = m;
    let tol = 1e-12 * (a.abs() + c.abs()).max(1e-300);
    if (b - b2).abs() > tol || a < 0.0 || c < 0.0 || a * c - b * b < -tol * (a.abs() + c.abs()) {
        return Err(MixedModelError::NotPsd(format!("{m:?}")));
    }
    if a > 0.0 {
        let l00 = a.sqrt();
        let l10 = b / l00;
        Ok([[l00, 0.0], [l10, (c - l10 * l10).max(0.0).sqrt()]])
    } else {
        if b.abs() > tol {
            return Err(MixedModelError::NotPsd(format!("{m:?}")));
        }
        Ok([[0.0, 0.0], [0.0, c.sqrt()]])
    }
}
