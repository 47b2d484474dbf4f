//! Synthetic studies: longitudinal markers from an LMM or an MLPMM, Weibull
//! event times driven by the random effects, planned visit schedules and
//! uniform administrative censoring.
//!
//! Random draws come from separate streams of the study seed (coefficients,
//! random effects, measurement noise, event times, censoring), so a
//! `(spec, seed)` pair always yields the same study.

use crate::data::{DataError, ItemMap, LongitudinalDataset, LongitudinalRow, Study, SubjectId, SurvivalDataset, SurvivalRecord};
use crate::rng::stream_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

type Result<T> = std::result::Result<T, SimulationError>;

/// Planned visit schedule, in years from baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Design {
    /// Visits at 0, 1 and 2.
    Few,
    /// Ten visits every half year from 0 to 4.5.
    Many,
}

impl Design {
    pub fn schedule(&self) -> Vec<f64> {
        match self {
            Design::Few => vec![0.0, 1.0, 2.0],
            Design::Many => (0..10).map(|k| 0.5 * k as f64).collect(),
        }
    }
}

/// Which shared random effects enter the hazard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectLaw {
    InterceptsAndSlopes,
    SlopesOnly,
}

/// Measurement model of every process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkerModel {
    /// One item per process: `y = β0 + β1 a + b0 + b1 a + ε`.
    Lmm {
        fixed: [f64; 2],
        d: [[f64; 2]; 2],
        sigma2_eps: f64,
    },
    /// `items` items per process sharing `(u0, u1)`, each with its own
    /// random intercept: `y_q = β_q0 + β_q1 a + u0 + u1 a + b_q + ε_q`.
    Mlpmm {
        items: usize,
        fixed: [f64; 2],
        sigma_u: [[f64; 2]; 2],
        sigma2_b: f64,
        sigma2_eps: f64,
    },
}

impl MarkerModel {
    pub fn items_per_process(&self) -> usize {
        match self {
            MarkerModel::Lmm { .. } => 1,
            MarkerModel::Mlpmm { items, .. } => *items,
        }
    }

    fn shared_cov(&self) -> [[f64; 2]; 2] {
        match self {
            MarkerModel::Lmm { d, .. } => *d,
            MarkerModel::Mlpmm { sigma_u, .. } => *sigma_u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Scenario number 1–12, or `None` for a custom spec.
    #[serde(default)]
    pub id: Option<u32>,
    pub processes: usize,
    pub n: usize,
    pub design: Design,
    pub model: MarkerModel,
    /// The first `active` processes enter the hazard.
    pub active: usize,
    pub effects: EffectLaw,
    /// Active coefficients are `±U(lo, hi)` with random signs.
    #[serde(default = "default_coef_range")]
    pub coef_range: [f64; 2],
    #[serde(default = "default_shape")]
    pub weibull_shape: f64,
    /// Weibull scale; calibrated so the median event time is
    /// `target_median` when absent.
    #[serde(default)]
    pub weibull_scale: Option<f64>,
    #[serde(default = "default_median")]
    pub target_median: f64,
    /// Upper end of the uniform censoring law; calibrated to
    /// `target_censoring` when absent.
    #[serde(default)]
    pub censor_max: Option<f64>,
    #[serde(default = "default_censoring")]
    pub target_censoring: f64,
    #[serde(default)]
    pub baseline_age: f64,
}

fn default_coef_range() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_shape() -> f64 {
    2.0
}
fn default_median() -> f64 {
    2.5
}
fn default_censoring() -> f64 {
    0.3
}

const LMM_FIXED: [f64; 2] = [1.0, 0.5];
const SIGMA2_EPS: f64 = 0.5;
const SIGMA2_B: f64 = 0.5;
const CALIBRATION_SEED: u64 = 0x5eed_ca11;
const CALIBRATION_N: usize = 20_000;

impl ScenarioSpec {
    /// One of the twelve predefined scenarios.
    ///
    /// 1–3 use 30 single-item markers (6 active), 4–6 use 150 (10 active),
    /// 7–9 use 10 processes of 3 items (4 active) and 10–12 use 50 processes
    /// of 3 items (10 active). Within each block the first scenario has
    /// intercepts and slopes in the hazard with unit variances, the second
    /// slopes only, and the third low intercept and high slope variance.
    pub fn scenario(id: u32, n: usize, design: Design) -> Result<ScenarioSpec> {
        if !(1..=12).contains(&id) {
            return Err(SimulationError::Spec(format!("unknown scenario {id}")));
        }
        let block = (id - 1) / 3;
        let kind = (id - 1) % 3;
        let (processes, active) = match block {
            0 => (30, 6),
            1 => (150, 10),
            2 => (10, 4),
            _ => (50, 10),
        };
        let effects = if kind == 1 {
            EffectLaw::SlopesOnly
        } else {
            EffectLaw::InterceptsAndSlopes
        };
        let model = if block < 2 {
            let d = if kind == 2 { [[0.1, 0.0], [0.0, 2.0]] } else { [[1.0, 0.0], [0.0, 1.0]] };
            MarkerModel::Lmm {
                fixed: LMM_FIXED,
                d,
                sigma2_eps: SIGMA2_EPS,
            }
        } else {
            let c = 0.5 * 0.2f64.sqrt();
            let sigma_u = if kind == 2 { [[0.1, c], [c, 2.0]] } else { [[1.0, 0.5], [0.5, 1.0]] };
            MarkerModel::Mlpmm {
                items: 3,
                fixed: LMM_FIXED,
                sigma_u,
                sigma2_b: SIGMA2_B,
                sigma2_eps: SIGMA2_EPS,
            }
        };
        Ok(ScenarioSpec {
            id: Some(id),
            processes,
            n,
            design,
            model,
            active,
            effects,
            coef_range: default_coef_range(),
            weibull_shape: default_shape(),
            weibull_scale: None,
            target_median: default_median(),
            censor_max: None,
            target_censoring: default_censoring(),
            baseline_age: 0.0,
        })
    }

    pub fn n_items(&self) -> usize {
        self.processes * self.model.items_per_process()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimulationError::Spec(m));
        if self.processes == 0 || self.n == 0 {
            return bad("need at least one process and one subject".into());
        }
        if self.active > self.processes {
            return bad(format!("{} active of {} processes", self.active, self.processes));
        }
        let [lo, hi] = self.coef_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("coefficient range [{lo}, {hi}]"));
        }
        if !(self.weibull_shape > 0.0) || self.weibull_scale.is_some_and(|s| !(s > 0.0)) {
            return bad("Weibull shape and scale must be positive".into());
        }
        if !(self.target_median > 0.0) || !(self.target_censoring >= 0.0 && self.target_censoring < 1.0) {
            return bad("invalid calibration targets".into());
        }
        if self.censor_max.is_some_and(|c| !(c > 0.0)) {
            return bad("censor_max must be positive".into());
        }
        if !self.baseline_age.is_finite() {
            return bad("baseline age must be finite".into());
        }
        if !is_psd(&self.model.shared_cov()) {
            return bad("random-effect covariance is not positive semi-definite".into());
        }
        match &self.model {
            MarkerModel::Lmm { sigma2_eps, .. } if !(*sigma2_eps > 0.0) => bad("sigma2_eps must be positive".into()),
            MarkerModel::Mlpmm { items, sigma2_b, sigma2_eps, .. } => {
                if *items < 2 {
                    bad("an MLPMM process needs at least two items".into())
                } else if !(*sigma2_b >= 0.0) || !(*sigma2_eps > 0.0) {
                    bad("item variances must be non-negative, residual variance positive".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Item names in item-map order: `m01…` for single-item processes,
    /// `P01_1…` otherwise.
    pub fn item_map(&self) -> ItemMap {
        let w = digits(self.processes);
        let r = self.model.items_per_process();
        let mut pairs = Vec::new();
        for s in 0..self.processes {
            if r == 1 {
                let name = format!("m{:0w$}", s + 1);
                pairs.push((name.clone(), name));
            } else {
                let process = format!("P{:0w$}", s + 1);
                for q in 0..r {
                    pairs.push((format!("{process}_{}", q + 1), process.clone()));
                }
            }
        }
        ItemMap::from_pairs(pairs).expect("generated names are unique")
    }
}

fn digits(n: usize) -> usize {
    n.to_string().len().max(2)
}

fn is_psd(c: &[[f64; 2]; 2]) -> bool {
    c[0][1] == c[1][0] && c[0][0] >= 0.0 && c[1][1] >= 0.0 && c[0][0] * c[1][1] - c[0][1] * c[0][1] >= -1e-12
}

/// Generating quantities of a simulated study, in subject order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub weibull_scale: f64,
    pub censor_max: f64,
    /// Hazard coefficients of `(u0, u1)` per process.
    pub coefficients: Vec<[f64; 2]>,
    /// Per subject and process, the shared intercept and slope.
    pub shared: Vec<Vec<[f64; 2]>>,
    /// Per subject, the item-specific intercepts (MLPMM only).
    pub item_effects: Vec<Vec<f64>>,
    pub linear_predictor: Vec<f64>,
    pub event_time: Vec<f64>,
    pub censor_time: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedStudy {
    pub study: Study,
    pub truth: Truth,
}

/// `T = (−log U / (scale · e^η))^(1/shape)`: Weibull proportional hazards
/// with baseline hazard `scale · shape · t^(shape − 1)`.
pub fn weibull_event_times(lp: &[f64], shape: f64, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    lp.iter()
        .map(|&eta| {
            let u: f64 = 1.0 - rng.random::<f64>();
            (-u.ln() / (scale * eta.exp())).powf(1.0 / shape)
        })
        .collect()
}

/// Observed follow-up, status and retained visits for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowUp {
    pub time: f64,
    pub status: bool,
    pub censor_time: f64,
    /// Planned visits at or before `time`.
    pub visits: Vec<f64>,
}

/// Applies `Uniform(0, censor_max)` censoring and drops planned visits after
/// the end of follow-up.
pub fn apply_design_and_censoring(
    event_times: &[f64],
    design: Design,
    censor_max: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FollowUp>> {
    if !(censor_max > 0.0) {
        return Err(SimulationError::Spec(format!("censor_max = {censor_max}")));
    }
    let schedule = design.schedule();
    let out: Vec<FollowUp> = event_times
        .iter()
        .map(|&t| {
            let c = censor_max * (1.0 - rng.random::<f64>());
            let time = t.min(c);
            FollowUp {
                time,
                status: t <= c,
                censor_time: c,
                visits: schedule.iter().copied().filter(|&v| v <= time).collect(),
            }
        })
        .collect();
    if out.iter().all(|f| !f.status && f.time <= 0.0) {
        return Err(SimulationError::Spec("every subject is censored at time 0".into()));
    }
    Ok(out)
}

mod streams {
    pub const COEFFICIENTS: u64 = 1;
    pub const EFFECTS: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const EVENTS: u64 = 4;
    pub const CENSORING: u64 = 5;
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn draw_coefficients(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let [lo, hi] = spec.coef_range;
    let draw = |rng: &mut ChaCha8Rng| {
        let mag = lo + (hi - lo) * rng.random::<f64>();
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    };
    (0..spec.processes)
        .map(|s| {
            if s >= spec.active {
                return [0.0, 0.0];
            }
            let g = draw(rng);
            let d = draw(rng);
            match spec.effects {
                EffectLaw::InterceptsAndSlopes => [g, d],
                EffectLaw::SlopesOnly => [0.0, d],
            }
        })
        .collect()
}

fn draw_shared(cov: &[[f64; 2]; 2], rng: &mut ChaCha8Rng) -> [f64; 2] {
    let l00 = cov[0][0].sqrt();
    let l10 = if l00 > 0.0 { cov[0][1] / l00 } else { 0.0 };
    let l11 = (cov[1][1] - l10 * l10).max(0.0).sqrt();
    let (z0, z1) = (normal(rng), normal(rng));
    [l00 * z0, l10 * z0 + l11 * z1]
}

fn linear_predictors(coefs: &[[f64; 2]], shared: &[Vec<[f64; 2]>]) -> Vec<f64> {
    shared
        .iter()
        .map(|u| u.iter().zip(coefs).map(|(u, c)| c[0] * u[0] + c[1] * u[1]).sum())
        .collect()
}

/// Weibull scale giving population median `target_median`, and the uniform
/// censoring bound giving censoring fraction `target_censoring`, for the
/// hazard coefficients `coefs`. Both are solved on a large calibration
/// sample of random effects drawn from a fixed seed.
pub fn calibrate(spec: &ScenarioSpec, coefs: &[[f64; 2]]) -> Result<(f64, f64)> {
    spec.validate()?;
    if coefs.len() != spec.processes {
        return Err(SimulationError::Spec(format!("{} coefficient pairs for {} processes", coefs.len(), spec.processes)));
    }
    let mut rng = stream_rng(CALIBRATION_SEED, streams::EFFECTS);
    let cov = spec.model.shared_cov();
    let active: Vec<[f64; 2]> = coefs.iter().copied().filter(|c| c[0] != 0.0 || c[1] != 0.0).collect();
    let lp: Vec<f64> = (0..CALIBRATION_N)
        .map(|_| active.iter().map(|c| {
            let u = draw_shared(&cov, &mut rng);
            c[0] * u[0] + c[1] * u[1]
        }).sum())
        .collect();
    let shape = spec.weibull_shape;
    let scale = match spec.weibull_scale {
        Some(s) => s,
        None => {
            // Population survival at the target median, as a function of log scale.
            let tk = spec.target_median.powf(shape);
            let surv = |log_scale: f64| {
                let s = log_scale.exp();
                lp.iter().map(|&e| (-s * tk * e.exp()).exp()).sum::<f64>() / lp.len() as f64 - 0.5
            };
            bisect(surv, -60.0, 60.0, true).exp()
        }
    };
    let censor_max = match spec.censor_max {
        Some(c) => c,
        None if spec.target_censoring == 0.0 => f64::MAX,
        None => {
            let mut rng = stream_rng(CALIBRATION_SEED, streams::EVENTS);
            let times = weibull_event_times(&lp, shape, scale, &mut rng);
            // P(C < T) = E[min(T / c, 1)], decreasing in c.
            let frac = |log_c: f64| {
                let c = log_c.exp();
                times.iter().map(|&t| (t / c).min(1.0)).sum::<f64>() / times.len() as f64 - spec.target_censoring
            };
            bisect(frac, -20.0, 20.0, true).exp()
        }
    };
    Ok((scale, censor_max))
}

/// Root of a monotone function on `[lo, hi]`; `decreasing` gives its direction.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, decreasing: bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v > 0.0) == decreasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn generate(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedStudy> {
    spec.validate()?;
    let n = spec.n;
    let p = spec.processes;
    let r = spec.model.items_per_process();
    let coefficients = draw_coefficients(spec, &mut stream_rng(seed, streams::COEFFICIENTS));
    let (scale, censor_max) = calibrate(spec, &coefficients)?;

    let cov = spec.model.shared_cov();
    let mut rng = stream_rng(seed, streams::EFFECTS);
    let mut shared = Vec::with_capacity(n);
    let mut item_effects = Vec::with_capacity(n);
    for _ in 0..n {
        shared.push((0..p).map(|_| draw_shared(&cov, &mut rng)).collect::<Vec<_>>());
        if let MarkerModel::Mlpmm { sigma2_b, .. } = spec.model {
            let sd = sigma2_b.sqrt();
            item_effects.push((0..p * r).map(|_| sd * normal(&mut rng)).collect());
        } else {
            item_effects.push(Vec::new());
        }
    }
    let linear_predictor = linear_predictors(&coefficients, &shared);
    let event_time = weibull_event_times(&linear_predictor, spec.weibull_shape, scale, &mut stream_rng(seed, streams::EVENTS));
    let follow = apply_design_and_censoring(&event_time, spec.design, censor_max, &mut stream_rng(seed, streams::CENSORING))?;

    // Noise for every planned visit, so retained values do not depend on censoring.
    let schedule = spec.design.schedule();
    let (fixed, sigma2_eps) = match spec.model {
        MarkerModel::Lmm { fixed, sigma2_eps, .. } => (fixed, sigma2_eps),
        MarkerModel::Mlpmm { fixed, sigma2_eps, .. } => (fixed, sigma2_eps),
    };
    let sd_eps = sigma2_eps.sqrt();
    let mut rng = stream_rng(seed, streams::NOISE);
    let item_map = spec.item_map();
    let w = digits(n);
    let mut rows = Vec::new();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let id = SubjectId::new(format!("s{:0w$}", i + 1))?;
        for &v in &schedule {
            let noise: Vec<f64> = (0..p * r).map(|_| sd_eps * normal(&mut rng)).collect();
            if !follow[i].visits.contains(&v) {
                continue;
            }
            let values = (0..p * r)
                .map(|k| {
                    let u = shared[i][k / r];
                    let b = item_effects[i].get(k).copied().unwrap_or(0.0);
                    Some(fixed[0] + fixed[1] * v + u[0] + u[1] * v + b + noise[k])
                })
                .collect();
            rows.push(LongitudinalRow {
                subject: id.clone(),
                age: spec.baseline_age + v,
                values,
            });
        }
        records.push(SurvivalRecord {
            subject: id,
            baseline_age: spec.baseline_age,
            time: follow[i].time,
            status: follow[i].status,
        });
    }
    let longitudinal = LongitudinalDataset::from_rows(rows, &item_map)?;
    let survival = SurvivalDataset::from_records(records)?;
    let study = Study::align(longitudinal, survival, item_map)?;
    Ok(SimulatedStudy {
        study,
        truth: Truth {
            spec: spec.clone(),
            seed,
            weibull_scale: scale,
            censor_max,
            coefficients,
            shared,
            item_effects,
            linear_predictor,
            event_time,
            censor_time: follow.iter().map(|f| f.censor_time).collect(),
        },
    })
}

/// Study with single-item markers generated from the LMM.
pub fn generate_lmm_study(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedStudy> {
    if !matches!(spec.model, MarkerModel::Lmm { .. }) {
        return Err(SimulationError::Spec("LMM generator needs an LMM marker model".into()));
    }
    generate(spec, seed)
}

/// Study with multi-item processes generated from the MLPMM. The hazard
/// depends on the shared effects only.
pub fn generate_mlpmm_study(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedStudy> {
    if !matches!(spec.model, MarkerModel::Mlpmm { .. }) {
        return Err(SimulationError::Spec("MLPMM generator needs an MLPMM marker model".into()));
    }
    generate(spec, seed)
}

/// Dispatches on the marker model.
pub fn generate_study(spec: &ScenarioSpec, seed: u64) -> Result<SimulatedStudy> {
    generate(spec, seed)
}
