//! Cross-validated choice of `λ` and nested cross-validation over `α`.
//!
//! The cross-validated deviance of fold `k` at `λ` is
//! `2 [−ℓ(β₋ₖ; all) + ℓ(β₋ₖ; train₋ₖ)]`, the partial-likelihood contribution
//! of the held-out fold given the model fitted without it. Fold deviances
//! are summed and divided by the total number of events.

use super::risk::{negloglik, RiskSets};
use super::solver::solve_path;
use super::{linear_predictor, prepare, CoxError, Covariates, PenalizedCoxFit, PenaltyConfig, Prepared};
use crate::data::SurvivalOutcome;
use crate::rng::stream_rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const MAX_FOLD_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    /// Cross-validated deviance per event at each `λ`.
    pub deviance: Vec<f64>,
    pub index_min: usize,
    pub lambda_min: f64,
    /// Fold of every row.
    pub fold_of: Vec<usize>,
}

/// Assigns rows to `k` folds, dealing events and non-events separately so
/// every fold receives events when there are at least `k` of them. Retries
/// with fresh random streams until every fold holds an event.
pub fn event_stratified_folds(event: &[bool], k: usize, seed: u64) -> Result<Vec<usize>, CoxError> {
    let n = event.len();
    if k < 2 || k > n {
        return Err(CoxError::Config(format!("{k} folds for {n} rows")));
    }
    for attempt in 0..MAX_FOLD_ATTEMPTS {
        let mut rng = stream_rng(seed, attempt as u64);
        let mut events: Vec<usize> = (0..n).filter(|&i| event[i]).collect();
        let mut censored: Vec<usize> = (0..n).filter(|&i| !event[i]).collect();
        events.shuffle(&mut rng);
        censored.shuffle(&mut rng);
        let mut fold_of = vec![0; n];
        for (pos, &i) in events.iter().chain(&censored).enumerate() {
            fold_of[i] = pos % k;
        }
        let mut has_event = vec![false; k];
        for &i in &events {
            has_event[fold_of[i]] = true;
        }
        if has_event.iter().all(|&h| h) {
            return Ok(fold_of);
        }
    }
    Err(CoxError::Folds {
        folds: k,
        attempts: MAX_FOLD_ATTEMPTS,
    })
}

/// Deviance contribution of a held-out fold for each coefficient vector.
fn fold_deviance(
    x: &Covariates,
    surv: &SurvivalOutcome,
    full_rs: &RiskSets,
    train: &[usize],
    coefs: &[(Vec<f64>, Vec<f64>)],
) -> Vec<f64> {
    let train_surv = surv.subset(train);
    let train_rs = RiskSets::new(&train_surv.time, &train_surv.event);
    coefs
        .iter()
        .map(|(coef, center)| {
            let lp = linear_predictor(x, coef, Some(center));
            let lp_train: Vec<f64> = train.iter().map(|&i| lp[i]).collect();
            let full = negloglik(full_rs, &full_rs.sort(&lp));
            let part = negloglik(&train_rs, &train_rs.sort(&lp_train));
            2.0 * (full - part)
        })
        .collect()
}

fn path_coefs(prep: &Prepared, x: &Covariates, alpha: f64, lambdas: &[f64], config: &PenaltyConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    solve_path(&prep.problem, alpha, lambdas, prep.start.clone(), &config.solver)
        .iter()
        .map(|s| (prep.coef(&s.beta, x.n_cols()), prep.scaling.center.clone()))
        .collect()
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &d) in v.iter().enumerate() {
        if d < v[best] {
            best = i;
        }
    }
    best
}

/// Cross-validation curve plus the full-data fit at the selected `λ`.
pub(crate) fn cv_with_fit(
    x: &Covariates,
    surv: &SurvivalOutcome,
    alpha: f64,
    folds: usize,
    seed: u64,
    config: &PenaltyConfig,
) -> Result<(CvCurve, PenalizedCoxFit), CoxError> {
    let prep = prepare(x, surv, config)?;
    let lambdas = prep.grid(alpha, config);
    let fold_of = event_stratified_folds(&surv.event, folds, seed)?;
    let full_rs = RiskSets::new(&surv.time, &surv.event);

    let per_fold: Vec<Result<(Vec<f64>, f64), CoxError>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = (0..x.n_rows()).filter(|&i| fold_of[i] != k).collect();
            let xt = x.subset(&train);
            let st = surv.subset(&train);
            let fold_prep = prepare(&xt, &st, config)?;
            let coefs = path_coefs(&fold_prep, &xt, alpha, &lambdas, config);
            let events = (0..x.n_rows()).filter(|&i| fold_of[i] == k && surv.event[i]).count();
            Ok((fold_deviance(x, surv, &full_rs, &train, &coefs), events as f64))
        })
        .collect();
    let mut total = vec![0.0; lambdas.len()];
    let mut events = 0.0;
    for r in per_fold {
        let (dev, e) = r?;
        total.iter_mut().zip(&dev).for_each(|(t, d)| *t += d);
        events += e;
    }
    let deviance: Vec<f64> = total.iter().map(|t| t / events).collect();
    let index_min = argmin(&deviance);

    let sols = solve_path(&prep.problem, alpha, &lambdas[..=index_min], prep.start.clone(), &config.solver);
    let fit = prep.build(x, surv, &sols[index_min], lambdas[index_min], alpha);
    Ok((
        CvCurve {
            alpha,
            lambda_min: lambdas[index_min],
            lambdas,
            deviance,
            index_min,
            fold_of,
        },
        fit,
    ))
}

/// Chooses `λ` on the path by `folds`-fold cross-validated deviance.
/// Penalty factors, path settings and solver options come from `config`.
pub fn cv_lambda(
    x: &Covariates,
    surv: &SurvivalOutcome,
    alpha: f64,
    folds: usize,
    seed: u64,
    config: &PenaltyConfig,
) -> Result<CvCurve, CoxError> {
    cv_with_fit(x, surv, alpha, folds, seed, config).map(|r| r.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerCurve {
    pub outer_fold: usize,
    pub alpha: f64,
    pub lambdas: Vec<f64>,
    pub deviance: Vec<f64>,
    pub lambda_min: f64,
    /// Deviance of the held-out outer fold at the inner choice.
    pub outer_deviance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedCvReport {
    pub alpha: f64,
    pub lambda: f64,
    pub alpha_grid: Vec<f64>,
    /// Outer-fold deviance per event for each grid value.
    pub outer_deviance: Vec<f64>,
    /// One curve per (outer fold, α) pair.
    pub inner: Vec<InnerCurve>,
    /// `cv_lambda` at the chosen `α` on all data.
    pub final_curve: CvCurve,
}

/// Seed derived from stream `stream` of `seed`.
fn derived_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, stream).next_u64()
}

const OUTER_STREAM: u64 = 999;

/// Nested cross-validation: outer folds score every `α` of the grid, each
/// with its own inner `cv_lambda`; the best `α` is then tuned for `λ` on all
/// data with `cv_lambda` and the same seed.
pub fn nested_cv(
    x: &Covariates,
    surv: &SurvivalOutcome,
    alpha_grid: &[f64],
    folds: usize,
    seed: u64,
    config: &PenaltyConfig,
) -> Result<NestedCvReport, CoxError> {
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(CoxError::Config(format!("alpha grid {alpha_grid:?}")));
    }
    let (alpha, final_curve, inner, outer_deviance) = if alpha_grid.len() == 1 {
        let curve = cv_lambda(x, surv, alpha_grid[0], folds, seed, config)?;
        (alpha_grid[0], curve, Vec::new(), vec![f64::NAN])
    } else {
        let outer_folds = event_stratified_folds(&surv.event, folds, derived_seed(seed, OUTER_STREAM))?;
        let full_rs = RiskSets::new(&surv.time, &surv.event);
        let jobs: Vec<(usize, f64)> = (0..folds).flat_map(|o| alpha_grid.iter().map(move |&a| (o, a))).collect();
        let results: Vec<Result<InnerCurve, CoxError>> = jobs
            .par_iter()
            .map(|&(o, a)| {
                let train: Vec<usize> = (0..x.n_rows()).filter(|&i| outer_folds[i] != o).collect();
                let xt = x.subset(&train);
                let st = surv.subset(&train);
                let (curve, fit) = cv_with_fit(&xt, &st, a, folds, derived_seed(seed, 1_000 + o as u64), config)?;
                let dev = fold_deviance(x, surv, &full_rs, &train, &[(fit.coef, fit.scaling.center)])[0];
                Ok(InnerCurve {
                    outer_fold: o,
                    alpha: a,
                    lambdas: curve.lambdas,
                    deviance: curve.deviance,
                    lambda_min: curve.lambda_min,
                    outer_deviance: dev,
                })
            })
            .collect();
        let inner: Vec<InnerCurve> = results.into_iter().collect::<Result<_, _>>()?;
        let events = surv.n_events() as f64;
        let outer_deviance: Vec<f64> = alpha_grid
            .iter()
            .map(|&a| inner.iter().filter(|c| c.alpha == a).map(|c| c.outer_deviance).sum::<f64>() / events)
            .collect();
        let best = argmin(&outer_deviance);
        let curve = cv_lambda(x, surv, alpha_grid[best], folds, seed, config)?;
        (alpha_grid[best], curve, inner, outer_deviance)
    };
    Ok(NestedCvReport {
        alpha,
        lambda: final_curve.lambda_min,
        alpha_grid: alpha_grid.to_vec(),
        outer_deviance,
        inner,
        final_curve,
    })
}
