//! Discrimination metrics for survival predictions and the Kaplan–Meier
//! estimator.
//!
//! Both discrimination metrics only use the ordering of the risk scores, so
//! any strictly increasing transform of the scores leaves them unchanged.

use crate::data::SurvivalOutcome;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("{scores} scores for {subjects} subjects")]
    Shape { scores: usize, subjects: usize },
    #[error("non-finite risk score")]
    NonFinite,
    #[error("invalid {name} = {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("C index undefined: no usable pairs")]
    NoUsablePairs,
    #[error("tdAUC undefined at t = {0}: no events by t")]
    NoEventsBy(f64),
    #[error("tdAUC undefined at t = {0}: nobody at risk after t")]
    NoSurvivorsAfter(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Metric {
    CIndex,
    Tdauc,
}

/// One metric to compute: the C index (optionally truncated at `tau`) or
/// the tdAUC at `horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRequest {
    pub metric: Metric,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
}

impl MetricRequest {
    pub fn c_index() -> Self {
        MetricRequest {
            metric: Metric::CIndex,
            horizon: None,
            tau: None,
        }
    }

    pub fn tdauc(horizon: f64) -> Self {
        MetricRequest {
            metric: Metric::Tdauc,
            horizon: Some(horizon),
            tau: None,
        }
    }

    /// The C index plus tdAUC every half year up to 5 years.
    pub fn default_set() -> Vec<MetricRequest> {
        let mut v = vec![MetricRequest::c_index()];
        v.extend((1..=10).map(|k| MetricRequest::tdauc(0.5 * k as f64)));
        v
    }

    /// Short label such as `C` or `tdAUC(2.5)`.
    pub fn label(&self) -> String {
        match self.metric {
            Metric::CIndex => match self.tau {
                Some(t) => format!("C(tau={t})"),
                None => "C".into(),
            },
            Metric::Tdauc => format!("tdAUC({})", self.horizon.unwrap_or(f64::NAN)),
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(MetricError::Parameter { name: "tau", value: t });
            }
        }
        match (self.metric, self.horizon) {
            (Metric::Tdauc, None) => Err(MetricError::Parameter {
                name: "horizon",
                value: f64::NAN,
            }),
            (Metric::Tdauc, Some(h)) if !(h > 0.0) => Err(MetricError::Parameter { name: "horizon", value: h }),
            _ => Ok(()),
        }
    }

    /// Evaluates the request with default estimator settings.
    pub fn evaluate(&self, scores: &[f64], surv: &SurvivalOutcome) -> Result<f64, MetricError> {
        self.validate()?;
        match self.metric {
            Metric::CIndex => c_index(scores, surv, self.tau),
            Metric::Tdauc => td_auc(scores, surv, self.horizon.expect("validated"), None),
        }
    }
}

fn check(scores: &[f64], surv: &SurvivalOutcome) -> Result<(), MetricError> {
    if scores.len() != surv.len() {
        return Err(MetricError::Shape {
            scores: scores.len(),
            subjects: surv.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

/// Truncated concordance: over pairs where subject `i` has an observed event
/// at `t_i < τ` and subject `j` is still under observation after `t_i`, the
/// fraction in which `i` has the higher score. Score ties count 1/2.
/// `τ` defaults to the largest observed time.
pub fn c_index(scores: &[f64], surv: &SurvivalOutcome, tau: Option<f64>) -> Result<f64, MetricError> {
    check(scores, surv)?;
    let tau = match tau {
        Some(t) if !(t > 0.0) => return Err(MetricError::Parameter { name: "tau", value: t }),
        Some(t) => t,
        None => surv.time.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| surv.time[a].total_cmp(&surv.time[b]));
    let mut pairs = 0.0;
    let mut concordant = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        let ti = surv.time[i];
        if !surv.event[i] || ti >= tau {
            continue;
        }
        for &j in &order[pos + 1..] {
            if surv.time[j] <= ti {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                concordant += 1.0;
            } else if scores[i] == scores[j] {
                concordant += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        return Err(MetricError::NoUsablePairs);
    }
    Ok(concordant / pairs)
}

/// Default nearest-neighbour span `0.25 n^(-1/5)`.
pub fn default_span(n: usize) -> f64 {
    0.25 * (n as f64).powf(-0.2)
}

/// Cumulative/dynamic AUC at `t` with the nearest-neighbour estimator of the
/// joint law of score and survival.
///
/// For every subject the conditional survival `S(t | score)` is a
/// Kaplan–Meier estimate over the subjects whose score rank lies within
/// `⌊n · span⌋` of its own (whole tie groups included). Sensitivity and
/// specificity follow from averaging these over subjects above each cut-off,
/// and the ROC curve is integrated with the trapezoid rule. With `span = 0`
/// and no censoring this is the empirical AUC over (event by `t`, event-free
/// after `t`) pairs.
pub fn td_auc(scores: &[f64], surv: &SurvivalOutcome, t: f64, span: Option<f64>) -> Result<f64, MetricError> {
    check(scores, surv)?;
    if !(t > 0.0) {
        return Err(MetricError::Parameter { name: "horizon", value: t });
    }
    let n = scores.len();
    let span = span.unwrap_or_else(|| default_span(n));
    if !(span >= 0.0) {
        return Err(MetricError::Parameter { name: "span", value: span });
    }
    if !(0..n).any(|i| surv.event[i] && surv.time[i] <= t) {
        return Err(MetricError::NoEventsBy(t));
    }
    if !(0..n).any(|i| surv.time[i] > t) {
        return Err(MetricError::NoSurvivorsAfter(t));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Tie groups in score order.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        groups.push((start, end));
        start = end;
    }
    let h = (n as f64 * span).floor() as usize;
    let group_of: Vec<usize> = groups.iter().enumerate().flat_map(|(g, &(a, b))| std::iter::repeat_n(g, b - a)).collect();
    let mut local = Vec::with_capacity(groups.len());
    for &(a, b) in &groups {
        let lo = group_of[a.saturating_sub(h)];
        let hi = group_of[(b - 1 + h).min(n - 1)];
        let members = &order[groups[lo].0..groups[hi].1];
        local.push(km_at(members, surv, t));
    }
    // Per group: count and summed conditional survival.
    let nf = n as f64;
    let marginal: f64 = groups.iter().zip(&local).map(|(&(a, b), s)| (b - a) as f64 * s).sum::<f64>() / nf;
    if !(marginal > 0.0) {
        return Err(MetricError::NoSurvivorsAfter(t));
    }
    if !(marginal < 1.0) {
        return Err(MetricError::NoEventsBy(t));
    }
    // Cut-offs from below: at the cut just under group g every subject in
    // groups g.. is classified positive.
    let mut above_count = nf;
    let mut above_surv = marginal * nf;
    let mut tp = Vec::with_capacity(groups.len() + 1);
    let mut fp = Vec::with_capacity(groups.len() + 1);
    for (&(a, b), s) in groups.iter().zip(&local) {
        tp.push((above_count - above_surv) / nf / (1.0 - marginal));
        fp.push(above_surv / nf / marginal);
        above_count -= (b - a) as f64;
        above_surv -= (b - a) as f64 * s;
    }
    tp.push(0.0);
    fp.push(0.0);
    let auc = tp
        .windows(2)
        .zip(fp.windows(2))
        .map(|(t2, f2)| 0.5 * (t2[0] + t2[1]) * (f2[0] - f2[1]))
        .sum::<f64>();
    Ok(auc.clamp(0.0, 1.0))
}

/// Kaplan–Meier survival at `t` among `members`.
fn km_at(members: &[usize], surv: &SurvivalOutcome, t: f64) -> f64 {
    let mut times: Vec<(f64, bool)> = members.iter().map(|&i| (surv.time[i], surv.event[i])).collect();
    times.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut at_risk = times.len() as f64;
    let mut s = 1.0;
    let mut k = 0;
    while k < times.len() && times[k].0 <= t {
        let tk = times[k].0;
        let mut d = 0.0;
        let mut m = 0.0;
        while k < times.len() && times[k].0 == tk {
            if times[k].1 {
                d += 1.0;
            }
            m += 1.0;
            k += 1;
        }
        if d > 0.0 {
            s *= 1.0 - d / at_risk;
        }
        at_risk -= m;
    }
    s
}

/// Product-limit table: one row per distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    pub times: Vec<f64>,
    pub n_risk: Vec<usize>,
    pub n_event: Vec<usize>,
    pub n_censor: Vec<usize>,
    /// Survival just after each time.
    pub survival: Vec<f64>,
}

impl KaplanMeier {
    /// Right-continuous step function; 1 before the first time.
    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

pub fn kaplan_meier(surv: &SurvivalOutcome) -> KaplanMeier {
    let mut order: Vec<usize> = (0..surv.len()).collect();
    order.sort_by(|&a, &b| surv.time[a].total_cmp(&surv.time[b]));
    let mut km = KaplanMeier {
        times: Vec::new(),
        n_risk: Vec::new(),
        n_event: Vec::new(),
        n_censor: Vec::new(),
        survival: Vec::new(),
    };
    let mut at_risk = surv.len();
    let mut s = 1.0;
    let mut k = 0;
    while k < order.len() {
        let t = surv.time[order[k]];
        let (mut d, mut c) = (0, 0);
        while k < order.len() && surv.time[order[k]] == t {
            if surv.event[order[k]] {
                d += 1;
            } else {
                c += 1;
            }
            k += 1;
        }
        s *= 1.0 - d as f64 / at_risk as f64;
        km.times.push(t);
        km.n_risk.push(at_risk);
        km.n_event.push(d);
        km.n_censor.push(c);
        km.survival.push(s);
        at_risk -= d + c;
    }
    km
}
