use super::gaussian::{self, Components, Layout, SubjectObs};
use super::optim::{maximize, OptimConfig};
use super::{check_design, flag_for, pooled_ols, psd_sqrt2, MixedModelError, RanefFlag, RanefPrediction, SubjectData, VARIANCE_FLOOR};
use serde::{Deserialize, Serialize};

/// Parameters of the multivariate latent process mixed model for one process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpmmParams {
    /// Per item `(β_q0, β_q1)`.
    pub beta: Vec<[f64; 2]>,
    /// Covariance of the shared intercept and slope.
    pub sigma_u: [[f64; 2]; 2],
    /// Item-specific random-intercept variances.
    pub sigma2_b: Vec<f64>,
    /// Item measurement-error variances.
    pub sigma2_eps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpmmItem {
    pub name: String,
    pub beta: [f64; 2],
    pub sigma2_b: f64,
    pub sigma2_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpmmFit {
    pub items: Vec<MlpmmItem>,
    /// `sigma_u[0][0]` is fixed at 1.
    pub sigma_u: [[f64; 2]; 2],
    pub constraint: String,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub trace: Vec<f64>,
}

pub(crate) const SIGMA_U_CONSTRAINT: &str = "sigma_u[0][0] fixed at 1";

impl MlpmmFit {
    pub fn params(&self) -> MlpmmParams {
        MlpmmParams {
            beta: self.items.iter().map(|i| i.beta).collect(),
            sigma_u: self.sigma_u,
            sigma2_b: self.items.iter().map(|i| i.sigma2_b).collect(),
            sigma2_eps: self.items.iter().map(|i| i.sigma2_eps).collect(),
        }
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }
}

fn components_from_params(p: &MlpmmParams) -> Result<Components, MixedModelError> {
    let r = p.beta.len();
    if p.sigma2_b.len() != r || p.sigma2_eps.len() != r {
        return Err(MixedModelError::Shape("inconsistent item counts".into()));
    }
    if let Some(s) = p.sigma2_eps.iter().find(|s| !(**s > 0.0)) {
        return Err(MixedModelError::NotPsd(format!("sigma2_eps = {s}")));
    }
    if let Some(s) = p.sigma2_b.iter().find(|s| !(**s >= 0.0)) {
        return Err(MixedModelError::NotPsd(format!("sigma2_b = {s}")));
    }
    let l = psd_sqrt2(p.sigma_u)?;
    let k = 2 + r;
    let mut lambda = vec![0.0; k * k];
    lambda[0] = l[0][0];
    lambda[k] = l[1][0];
    lambda[k + 1] = l[1][1];
    for q in 0..r {
        lambda[(2 + q) * k + 2 + q] = p.sigma2_b[q].sqrt();
    }
    Ok(Components {
        lambda,
        resid: p.sigma2_eps.clone(),
    })
}

/// `θ = [L10, log L11, log sd_b (r), log(σ²_ε − floor) (r)]`, `L00 = 1`.
fn theta_components(theta: &[f64], r: usize) -> Components {
    let k = 2 + r;
    let mut lambda = vec![0.0; k * k];
    lambda[0] = 1.0;
    lambda[k] = theta[0];
    lambda[k + 1] = theta[1].exp();
    for q in 0..r {
        lambda[(2 + q) * k + 2 + q] = theta[2 + q].exp();
    }
    Components {
        lambda,
        resid: (0..r).map(|q| VARIANCE_FLOOR + theta[2 + r + q].exp()).collect(),
    }
}

fn chain(theta: &[f64], r: usize, comps: &Components, grad_g: &[f64], grad_resid: &[f64]) -> Vec<f64> {
    let k = 2 + r;
    let l = &comps.lambda;
    let gl = |row: usize, col: usize| 2.0 * (0..k).map(|m| grad_g[row * k + m] * l[m * k + col]).sum::<f64>();
    let mut out = Vec::with_capacity(2 + 2 * r);
    out.push(gl(1, 0));
    out.push(gl(1, 1) * l[k + 1]);
    for q in 0..r {
        out.push(gl(2 + q, 2 + q) * l[(2 + q) * k + 2 + q]);
    }
    for q in 0..r {
        out.push(grad_resid[q] * theta[2 + r + q].exp());
    }
    out
}

fn to_obs(data: &[SubjectData], r: usize) -> Result<Vec<SubjectObs>, MixedModelError> {
    data.iter()
        .map(|s| {
            if s.items.len() != r {
                return Err(MixedModelError::Shape(format!(
                    "subject data holds {} items, model has {r}",
                    s.items.len()
                )));
            }
            Ok(s.to_obs())
        })
        .collect()
}

/// Marginal log-likelihood with per-subject covariance
/// `Z Σ_u Zᵀ + diag(σ²_ε) + Σ_q σ²_bq 𝟙_q 𝟙_qᵀ` over the stacked non-missing cells.
pub fn mlpmm_loglik(params: &MlpmmParams, data: &[SubjectData]) -> Result<f64, MixedModelError> {
    let r = params.beta.len();
    let comps = components_from_params(params)?;
    let subjects = to_obs(data, r)?;
    let layout = Layout::mlpmm(r);
    let prepared = gaussian::prepare(&layout, &comps, &subjects)
        .ok_or_else(|| MixedModelError::Numerical("mlpmm".into()))?;
    Ok(gaussian::evaluate(&layout, &comps, &params.beta, &prepared, &subjects, false).loglik)
}

/// Log-likelihood and gradient in the unconstrained parameterization
/// `[β (2r, item-major), L10, log L11, log sd_b (r), log(σ²_ε − floor) (r)]`.
pub fn mlpmm_loglik_unconstrained(
    theta: &[f64],
    r: usize,
    data: &[SubjectData],
) -> Result<(f64, Vec<f64>), MixedModelError> {
    if theta.len() != 4 * r + 2 {
        return Err(MixedModelError::Shape(format!(
            "expected {} parameters, got {}",
            4 * r + 2,
            theta.len()
        )));
    }
    let subjects = to_obs(data, r)?;
    let layout = Layout::mlpmm(r);
    let beta: Vec<[f64; 2]> = (0..r).map(|q| [theta[2 * q], theta[2 * q + 1]]).collect();
    let vtheta = &theta[2 * r..];
    let comps = theta_components(vtheta, r);
    let prepared = gaussian::prepare(&layout, &comps, &subjects)
        .ok_or_else(|| MixedModelError::Numerical("mlpmm".into()))?;
    let ev = gaussian::evaluate(&layout, &comps, &beta, &prepared, &subjects, true);
    let mut grad: Vec<f64> = ev.grad_beta.iter().flat_map(|g| g.iter().copied()).collect();
    grad.extend(chain(vtheta, r, &comps, &ev.grad_g, &ev.grad_resid));
    Ok((ev.loglik, grad))
}

fn profile(layout: &Layout, r: usize, theta: &[f64], subjects: &[SubjectObs]) -> Option<(f64, Vec<f64>)> {
    if theta[1] < -40.0 || theta[2..2 + r].iter().any(|&t| t < -40.0) || theta[2 + r..].iter().any(|&t| t < -60.0) {
        return None;
    }
    let comps = theta_components(theta, r);
    let prepared = gaussian::prepare(layout, &comps, subjects)?;
    let beta = gaussian::gls_beta(layout, &comps, &prepared, subjects)?;
    let ev = gaussian::evaluate(layout, &comps, &beta, &prepared, subjects, true);
    Some((ev.loglik, chain(theta, r, &comps, &ev.grad_g, &ev.grad_resid)))
}

/// Maximum-likelihood fit of the MLPMM to the `r ≥ 2` items of one process.
pub fn fit_mlpmm(names: &[String], data: &[SubjectData], config: &OptimConfig) -> Result<MlpmmFit, MixedModelError> {
    let r = names.len();
    if r < 2 {
        return Err(MixedModelError::TooFewItems(names.join("+")));
    }
    let subjects: Vec<SubjectObs> = to_obs(data, r)?.into_iter().filter(|s| !s.is_empty()).collect();
    check_design(&subjects, names)?;
    let layout = Layout::mlpmm(r);

    let mut theta0 = vec![0.0; 2 + 2 * r];
    let mut slope_var = 0.0;
    for q in 0..r {
        let (_, v, var_a) =
            pooled_ols(&subjects, q).ok_or_else(|| MixedModelError::NoObservations(names[q].clone()))?;
        slope_var += v / (4.0 * var_a) / r as f64;
        theta0[2 + q] = (v / 4.0).sqrt().ln();
        theta0[2 + r + q] = (v / 2.0 - VARIANCE_FLOOR).ln();
    }
    theta0[1] = slope_var.sqrt().ln();

    let res = maximize(|t| profile(&layout, r, t, &subjects), theta0, config)
        .ok_or_else(|| MixedModelError::Numerical(names.join("+")))?;
    let comps = theta_components(&res.x, r);
    let numerical = || MixedModelError::Numerical(names.join("+"));
    let prepared = gaussian::prepare(&layout, &comps, &subjects).ok_or_else(numerical)?;
    let beta = gaussian::gls_beta(&layout, &comps, &prepared, &subjects).ok_or_else(numerical)?;
    let loglik = gaussian::evaluate(&layout, &comps, &beta, &prepared, &subjects, false).loglik;
    let k = 2 + r;
    let (l10, l11) = (comps.lambda[k], comps.lambda[k + 1]);
    let sigma_u = [[1.0, l10], [l10, l10 * l10 + l11 * l11]];
    let items = (0..r)
        .map(|q| {
            let sd = comps.lambda[(2 + q) * k + 2 + q];
            MlpmmItem {
                name: names[q].clone(),
                beta: beta[q],
                sigma2_b: sd * sd,
                sigma2_eps: comps.resid[q],
            }
        })
        .collect();
    Ok(MlpmmFit {
        items,
        sigma_u,
        constraint: SIGMA_U_CONSTRAINT.to_string(),
        loglik,
        converged: res.converged,
        iterations: res.iterations,
        trace: res.trace,
    })
}

/// Conditional means `(u0, u1, b_1, …, b_r)` given one subject's observations.
pub fn predict_ranef_mlpmm(fit: &MlpmmFit, subject: &SubjectData) -> Result<RanefPrediction, MixedModelError> {
    let r = fit.n_items();
    let obs = to_obs(std::slice::from_ref(subject), r)?.remove(0);
    let flag = flag_for(&obs);
    if flag == RanefFlag::PriorMean {
        return Ok(RanefPrediction {
            values: vec![0.0; 2 + r],
            flag,
        });
    }
    let params = fit.params();
    let comps = components_from_params(&params)?;
    let values = gaussian::blup(&Layout::mlpmm(r), &comps, &params.beta, &obs)
        .ok_or_else(|| MixedModelError::Numerical("mlpmm prediction".into()))?;
    Ok(RanefPrediction { values, flag })
}
