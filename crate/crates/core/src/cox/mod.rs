//! Step 3: elastic-net penalized Cox regression on the predicted random
//! effects, with cross-validated tuning, the Breslow baseline hazard and
//! predicted survival curves.
//!
//! Penalized columns are standardized to unit (population) variance before
//! fitting and unpenalized columns are only centered; reported coefficients
//! are on the original scale. Linear predictors are always centered at the
//! training means, `η = Σ_j β_j (x_j − μ_j)`.

mod cv;
mod risk;
mod solver;

pub use cv::{cv_lambda, event_stratified_folds, nested_cv, CvCurve, InnerCurve, NestedCvReport};
pub use solver::SolverOptions;

use risk::{negloglik, RiskSets, RiskState};
use serde::{Deserialize, Serialize};
use solver::{lambda_grid, lambda_max, solve, solve_path, unpenalized_fit, Penalty, Problem, Solution};
use thiserror::Error;

use crate::data::SurvivalOutcome;

#[derive(Debug, Error)]
pub enum CoxError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least 2 events to fit, got {0}")]
    TooFewEvents(usize),
    #[error("non-finite covariate value in column `{0}`")]
    NonFinite(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("invalid penalty configuration: {0}")]
    Config(String),
    #[error("could not build {folds} folds with events in every fold after {attempts} attempts")]
    Folds { folds: usize, attempts: usize },
}

/// Column-major covariate matrix with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Covariates {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, n_rows: usize) -> Result<Self, CoxError> {
        if names.len() != columns.len() {
            return Err(CoxError::Shape(format!("{} names for {} columns", names.len(), columns.len())));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(CoxError::Shape(format!("column `{name}` has {} rows, expected {n_rows}", col.len())));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(CoxError::NonFinite(name.clone()));
            }
        }
        let mut sorted: Vec<&String> = names.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(CoxError::Shape(format!("duplicate column `{}`", w[0])));
        }
        Ok(Covariates { names, columns, n_rows })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, CoxError> {
        let d = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(CoxError::Shape(format!("row of length {} for {d} columns", r.len())));
        }
        let columns = (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Covariates::new(names, columns, rows.len())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Covariates {
        Covariates {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            n_rows: rows.len(),
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|j| self.columns[j].as_slice())
    }
}

/// Tuning parameter `λ`: selected by cross-validation or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaChoice {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    /// Mixing weight in `[0, 1]`; 0 is ridge, 1 is lasso.
    pub alpha: f64,
    pub lambda: LambdaChoice,
    /// Number of points of the `λ` path.
    pub path_length: usize,
    /// `λ_min / λ_max`; defaults to 1e-3, or 1e-2 when there are more columns than rows.
    pub min_ratio: Option<f64>,
    /// Per-column multipliers, 0 for unpenalized columns. Empty means all 1.
    pub penalty_factors: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            alpha: 0.0,
            lambda: LambdaChoice::Auto,
            path_length: 100,
            min_ratio: None,
            penalty_factors: Vec::new(),
            folds: 10,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

impl PenaltyConfig {
    fn validate(&self, x: &Covariates) -> Result<Vec<f64>, CoxError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CoxError::Config(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        if let LambdaChoice::Fixed(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(CoxError::Config(format!("lambda = {l}")));
            }
        }
        if self.path_length == 0 {
            return Err(CoxError::Config("empty lambda path".into()));
        }
        if let Some(r) = self.min_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(CoxError::Config(format!("min_ratio = {r}")));
            }
        }
        if self.penalty_factors.is_empty() {
            return Ok(vec![1.0; x.n_cols()]);
        }
        if self.penalty_factors.len() != x.n_cols() {
            return Err(CoxError::Shape(format!(
                "{} penalty factors for {} columns",
                self.penalty_factors.len(),
                x.n_cols()
            )));
        }
        if self.penalty_factors.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(CoxError::Config("penalty factors must be finite and non-negative".into()));
        }
        Ok(self.penalty_factors.clone())
    }

    fn ratio(&self, n: usize, d: usize) -> f64 {
        self.min_ratio.unwrap_or(if n < d { 1e-2 } else { 1e-3 })
    }
}

/// Per-column centering and scaling. A zero scale marks a constant column,
/// whose coefficient is fixed at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    pub fn new(x: &Covariates, factors: &[f64]) -> Self {
        let n = x.n_rows() as f64;
        let mut center = Vec::with_capacity(x.n_cols());
        let mut scale = Vec::with_capacity(x.n_cols());
        for (col, &f) in x.columns.iter().zip(factors) {
            let mean = col.iter().sum::<f64>() / n.max(1.0);
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1.0)).sqrt();
            center.push(mean);
            scale.push(if sd <= 1e-12 * mean.abs().max(1.0) {
                0.0
            } else if f == 0.0 {
                1.0
            } else {
                sd
            });
        }
        Scaling { center, scale }
    }
}

/// Cumulative baseline hazard as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// Breslow increment at each time.
    pub increments: Vec<f64>,
}

impl BaselineHazard {
    pub fn cumulative(&self, t: f64) -> f64 {
        self.times.iter().zip(&self.increments).take_while(|(s, _)| **s <= t).map(|(_, h)| h).sum()
    }

    /// Cumulative hazard at each of the ascending or unsorted `times`.
    pub fn cumulative_at(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.cumulative(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedCoxFit {
    pub columns: Vec<String>,
    /// Coefficients on the original covariate scale.
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub penalty_factors: Vec<f64>,
    pub scaling: Scaling,
    pub baseline: BaselineHazard,
    /// Centered linear predictors of the training subjects.
    pub train_lp: Vec<f64>,
    pub converged: bool,
    /// Largest KKT violation of the standardized problem at the solution.
    pub kkt: f64,
}

/// Negative log partial likelihood with Breslow ties; 0 without events.
pub fn cox_negloglik(coef: &[f64], x: &Covariates, surv: &SurvivalOutcome) -> Result<f64, CoxError> {
    check_shapes(x, surv)?;
    if coef.len() != x.n_cols() {
        return Err(CoxError::Shape(format!("{} coefficients for {} columns", coef.len(), x.n_cols())));
    }
    let eta = linear_predictor(x, coef, None);
    Ok(negloglik_rows(&eta, surv))
}

fn negloglik_rows(eta: &[f64], surv: &SurvivalOutcome) -> f64 {
    let rs = RiskSets::new(&surv.time, &surv.event);
    negloglik(&rs, &rs.sort(eta))
}

fn check_shapes(x: &Covariates, surv: &SurvivalOutcome) -> Result<(), CoxError> {
    if x.n_rows() != surv.len() {
        return Err(CoxError::Shape(format!("{} covariate rows for {} outcomes", x.n_rows(), surv.len())));
    }
    Ok(())
}

fn linear_predictor(x: &Covariates, coef: &[f64], center: Option<&[f64]>) -> Vec<f64> {
    let mut eta = vec![0.0; x.n_rows()];
    for (j, (col, &b)) in x.columns.iter().zip(coef).enumerate() {
        if b == 0.0 {
            continue;
        }
        let mu = center.map_or(0.0, |c| c[j]);
        eta.iter_mut().zip(col).for_each(|(e, v)| *e += b * (v - mu));
    }
    eta
}

/// Breslow increments `d_k / Σ_{t_j ≥ t_k} exp(η_j)` at the distinct event times.
pub(crate) fn breslow(eta: &[f64], surv: &SurvivalOutcome) -> BaselineHazard {
    let rs = RiskSets::new(&surv.time, &surv.event);
    let sorted = rs.sort(eta);
    let sorted_time = rs.sort(&surv.time);
    let mut times = Vec::new();
    let mut increments = Vec::new();
    let mut s = 0.0;
    let mut rev = Vec::new();
    for &(start, end, d) in rs.groups.iter().rev() {
        s += sorted[start..end].iter().map(|e| e.exp()).sum::<f64>();
        if d > 0.0 {
            rev.push((sorted_time[start], d / s));
        }
    }
    for (t, h) in rev.into_iter().rev() {
        times.push(t);
        increments.push(h);
    }
    BaselineHazard { times, increments }
}

struct Prepared {
    factors: Vec<f64>,
    scaling: Scaling,
    problem: Problem,
    start: Solution,
}

fn prepare(x: &Covariates, surv: &SurvivalOutcome, config: &PenaltyConfig) -> Result<Prepared, CoxError> {
    check_shapes(x, surv)?;
    let factors = config.validate(x)?;
    let events = surv.n_events();
    if events < 2 {
        return Err(CoxError::TooFewEvents(events));
    }
    let scaling = Scaling::new(x, &factors);
    let problem = Problem::new(x, &surv.time, &surv.event, &scaling, &factors);
    let start = unpenalized_fit(&problem, &config.solver);
    Ok(Prepared {
        factors,
        scaling,
        problem,
        start,
    })
}

impl Prepared {
    fn grid(&self, alpha: f64, config: &PenaltyConfig) -> Vec<f64> {
        let lmax = lambda_max(&self.problem, alpha, &self.start);
        lambda_grid(lmax, config.path_length, config.ratio(self.problem.n(), self.problem.d()))
    }

    /// Original-scale coefficients for a standardized solution.
    fn coef(&self, beta: &[f64], n_cols: usize) -> Vec<f64> {
        let mut coef = vec![0.0; n_cols];
        for (k, &j) in self.problem.index.iter().enumerate() {
            coef[j] = beta[k] / self.scaling.scale[j];
        }
        coef
    }

    fn build(&self, x: &Covariates, surv: &SurvivalOutcome, sol: &Solution, lambda: f64, alpha: f64) -> PenalizedCoxFit {
        let coef = self.coef(&sol.beta, x.n_cols());
        let train_lp = linear_predictor(x, &coef, Some(&self.scaling.center));
        PenalizedCoxFit {
            columns: x.names.clone(),
            baseline: breslow(&train_lp, surv),
            coef,
            lambda,
            alpha,
            penalty_factors: self.factors.clone(),
            scaling: self.scaling.clone(),
            train_lp,
            converged: sol.converged,
            kkt: sol.kkt,
        }
    }
}

/// Fits the penalized Cox model. With `λ = auto`, `λ` is chosen by
/// `cv_lambda` with the configured folds and seed.
pub fn fit_penalized_cox(
    x: &Covariates,
    surv: &SurvivalOutcome,
    config: &PenaltyConfig,
) -> Result<PenalizedCoxFit, CoxError> {
    match config.lambda {
        LambdaChoice::Fixed(lambda) => {
            let prep = prepare(x, surv, config)?;
            let sol = solve(
                &prep.problem,
                Penalty {
                    lambda,
                    alpha: config.alpha,
                },
                prep.start.beta.clone(),
                None,
                &config.solver,
            );
            Ok(prep.build(x, surv, &sol, lambda, config.alpha))
        }
        LambdaChoice::Auto => cv::cv_with_fit(x, surv, config.alpha, config.folds, config.seed, config).map(|r| r.1),
    }
}

/// Fits along the full `λ` path (ignores `config.lambda`).
pub fn fit_lambda_path(
    x: &Covariates,
    surv: &SurvivalOutcome,
    config: &PenaltyConfig,
) -> Result<Vec<PenalizedCoxFit>, CoxError> {
    let prep = prepare(x, surv, config)?;
    let grid = prep.grid(config.alpha, config);
    let sols = solve_path(&prep.problem, config.alpha, &grid, prep.start.clone(), &config.solver);
    Ok(sols
        .iter()
        .zip(&grid)
        .map(|(s, &l)| prep.build(x, surv, s, l, config.alpha))
        .collect())
}

/// The `λ` grid used for `x` and `surv`.
pub fn lambda_path(x: &Covariates, surv: &SurvivalOutcome, config: &PenaltyConfig) -> Result<Vec<f64>, CoxError> {
    Ok(prepare(x, surv, config)?.grid(config.alpha, config))
}

/// Largest KKT violation of `fit` on its standardized training problem.
pub fn kkt_violation(fit: &PenalizedCoxFit, x: &Covariates, surv: &SurvivalOutcome) -> Result<f64, CoxError> {
    check_shapes(x, surv)?;
    let problem = Problem::new(x, &surv.time, &surv.event, &fit.scaling, &fit.penalty_factors);
    let beta: Vec<f64> = problem.index.iter().map(|&j| fit.coef[j] * fit.scaling.scale[j]).collect();
    let st = RiskState::new(&problem.rs, &problem.eta(&beta));
    Ok(solver::kkt(
        &problem.gradient(&st),
        &beta,
        &problem.factors,
        Penalty {
            lambda: fit.lambda,
            alpha: fit.alpha,
        },
        None,
    ))
}

/// Breslow baseline hazard of `fit` on `(x, surv)`.
pub fn breslow_baseline(fit: &PenalizedCoxFit, x: &Covariates, surv: &SurvivalOutcome) -> Result<BaselineHazard, CoxError> {
    check_shapes(x, surv)?;
    Ok(breslow(&predict_lp(fit, x)?, surv))
}

/// Centered linear predictors for new rows. `x` must carry exactly the
/// fit's columns, in any order.
pub fn predict_lp(fit: &PenalizedCoxFit, x: &Covariates) -> Result<Vec<f64>, CoxError> {
    if let Some(extra) = x.names.iter().find(|n| !fit.columns.contains(n)) {
        return Err(CoxError::UnknownColumn(extra.clone()));
    }
    let mut eta = vec![0.0; x.n_rows()];
    for (j, name) in fit.columns.iter().enumerate() {
        let col = x.column(name).ok_or_else(|| CoxError::MissingColumn(name.clone()))?;
        let (b, mu) = (fit.coef[j], fit.scaling.center[j]);
        if b != 0.0 {
            eta.iter_mut().zip(col).for_each(|(e, v)| *e += b * (v - mu));
        }
    }
    Ok(eta)
}

/// `Ŝ(t | x) = exp(−H0(t) e^η)` for every row of `x` and every time.
pub fn predict_survival(fit: &PenalizedCoxFit, x: &Covariates, times: &[f64]) -> Result<Vec<Vec<f64>>, CoxError> {
    let lp = predict_lp(fit, x)?;
    Ok(survival_from_lp(fit, &lp, times))
}

pub fn survival_from_lp(fit: &PenalizedCoxFit, lp: &[f64], times: &[f64]) -> Vec<Vec<f64>> {
    let h0 = fit.baseline.cumulative_at(times);
    lp.iter()
        .map(|&e| {
            let r = e.exp();
            h0.iter().map(|&h| if h == 0.0 { 1.0 } else { (-h * r).exp() }).collect()
        })
        .collect()
}
