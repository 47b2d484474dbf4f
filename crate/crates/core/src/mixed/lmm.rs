use super::gaussian::{self, Components, Layout, SubjectObs};
use super::optim::{maximize, OptimConfig};
use super::{check_design, flag_for, pooled_ols, psd_sqrt2, MixedModelError, RanefFlag, RanefPrediction, SubjectData, VARIANCE_FLOOR};
use serde::{Deserialize, Serialize};

/// Parameters of the single-item LMM with correlated random intercept and slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmmParams {
    /// Fixed intercept and age slope.
    pub beta: [f64; 2],
    /// Random-effects covariance `D`.
    pub d: [[f64; 2]; 2],
    pub sigma2_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub beta: [f64; 2],
    pub d: [[f64; 2]; 2],
    pub sigma2_eps: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Profile log-likelihood after each accepted optimizer step.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl LmmFit {
    pub fn params(&self) -> LmmParams {
        LmmParams {
            beta: self.beta,
            d: self.d,
            sigma2_eps: self.sigma2_eps,
        }
    }
}

fn components_from_params(p: &LmmParams) -> Result<Components, MixedModelError> {
    if !(p.sigma2_eps > 0.0) {
        return Err(MixedModelError::NotPsd(format!("sigma2_eps = {}", p.sigma2_eps)));
    }
    let l = psd_sqrt2(p.d)?;
    Ok(Components {
        lambda: vec![l[0][0], l[0][1], l[1][0], l[1][1]],
        resid: vec![p.sigma2_eps],
    })
}

/// `θ = [log L00, L10, log L11, log(σ² − floor)]`
fn theta_components(theta: &[f64]) -> Components {
    Components {
        lambda: vec![theta[0].exp(), 0.0, theta[1], theta[2].exp()],
        resid: vec![VARIANCE_FLOOR + theta[3].exp()],
    }
}

fn chain(theta: &[f64], comps: &Components, grad_g: &[f64], grad_resid: &[f64]) -> Vec<f64> {
    let l = &comps.lambda;
    // ∂ℓ/∂Λ = 2 (∂ℓ/∂G) Λ
    let gl = |r: usize, c: usize| 2.0 * (grad_g[r * 2] * l[c] + grad_g[r * 2 + 1] * l[2 + c]);
    vec![
        gl(0, 0) * l[0],
        gl(1, 0),
        gl(1, 1) * l[3],
        grad_resid[0] * theta[3].exp(),
    ]
}

fn to_obs(data: &[SubjectData]) -> Result<Vec<SubjectObs>, MixedModelError> {
    data.iter()
        .map(|s| {
            if s.items.len() != 1 {
                return Err(MixedModelError::Shape(format!(
                    "LMM subject data must hold exactly one item, got {}",
                    s.items.len()
                )));
            }
            Ok(s.to_obs())
        })
        .collect()
}

/// Marginal log-likelihood `Σ_i log N(y_i; X_i β, Z_i D Z_iᵀ + σ² I)`.
pub fn lmm_loglik(params: &LmmParams, data: &[SubjectData]) -> Result<f64, MixedModelError> {
    let comps = components_from_params(params)?;
    let subjects = to_obs(data)?;
    let layout = Layout::lmm();
    let prepared = gaussian::prepare(&layout, &comps, &subjects)
        .ok_or_else(|| MixedModelError::Numerical("lmm".into()))?;
    Ok(gaussian::evaluate(&layout, &comps, &[params.beta], &prepared, &subjects, false).loglik)
}

/// Log-likelihood and its gradient in the unconstrained parameterization
/// `[β0, β1, log L00, L10, log L11, log(σ² − floor)]` with `D = LLᵀ`.
pub fn lmm_loglik_unconstrained(theta: &[f64], data: &[SubjectData]) -> Result<(f64, Vec<f64>), MixedModelError> {
    if theta.len() != 6 {
        return Err(MixedModelError::Shape(format!("expected 6 parameters, got {}", theta.len())));
    }
    let subjects = to_obs(data)?;
    let layout = Layout::lmm();
    let comps = theta_components(&theta[2..]);
    let prepared = gaussian::prepare(&layout, &comps, &subjects)
        .ok_or_else(|| MixedModelError::Numerical("lmm".into()))?;
    let ev = gaussian::evaluate(&layout, &comps, &[[theta[0], theta[1]]], &prepared, &subjects, true);
    let mut grad = vec![ev.grad_beta[0][0], ev.grad_beta[0][1]];
    grad.extend(chain(&theta[2..], &comps, &ev.grad_g, &ev.grad_resid));
    Ok((ev.loglik, grad))
}

/// Profile log-likelihood over the variance parameters, fixed effects by GLS.
fn profile(layout: &Layout, theta: &[f64], subjects: &[SubjectObs]) -> Option<(f64, Vec<f64>)> {
    let comps = theta_components(theta);
    let prepared = gaussian::prepare(layout, &comps, subjects)?;
    let beta = gaussian::gls_beta(layout, &comps, &prepared, subjects)?;
    let ev = gaussian::evaluate(layout, &comps, &beta, &prepared, subjects, true);
    Some((ev.loglik, chain(theta, &comps, &ev.grad_g, &ev.grad_resid)))
}

/// Maximum-likelihood fit of the LMM to one item. `name` labels errors.
pub fn fit_lmm(name: &str, data: &[SubjectData], config: &OptimConfig) -> Result<LmmFit, MixedModelError> {
    let subjects: Vec<SubjectObs> = to_obs(data)?.into_iter().filter(|s| !s.is_empty()).collect();
    check_design(&subjects, &[name.to_string()])?;
    let layout = Layout::lmm();
    let (_, v, var_a) = pooled_ols(&subjects, 0).ok_or_else(|| MixedModelError::NoObservations(name.into()))?;
    // Half of the residual variance to σ², the rest split between intercept and slope.
    let theta0 = vec![
        (v / 4.0).sqrt().ln(),
        0.0,
        (v / (4.0 * var_a)).sqrt().ln(),
        (v / 2.0 - VARIANCE_FLOOR).ln(),
    ];
    let res = maximize(|t| clamp_profile(&layout, t, &subjects), theta0, config)
        .ok_or_else(|| MixedModelError::Numerical(name.into()))?;
    let comps = theta_components(&res.x);
    let prepared = gaussian::prepare(&layout, &comps, &subjects).ok_or_else(|| MixedModelError::Numerical(name.into()))?;
    let beta = gaussian::gls_beta(&layout, &comps, &prepared, &subjects)
        .ok_or_else(|| MixedModelError::Numerical(name.into()))?;
    let loglik = gaussian::evaluate(&layout, &comps, &beta, &prepared, &subjects, false).loglik;
    let l = &comps.lambda;
    let d = [
        [l[0] * l[0], l[0] * l[2]],
        [l[0] * l[2], l[2] * l[2] + l[3] * l[3]],
    ];
    Ok(LmmFit {
        beta: beta[0],
        d,
        sigma2_eps: comps.resid[0],
        loglik,
        converged: res.converged,
        iterations: res.iterations,
        trace: res.trace,
    })
}

/// Log-scale parameters far below any meaningful variance are treated as
/// outside the domain so the optimizer cannot wander off to -∞.
fn clamp_profile(layout: &Layout, theta: &[f64], subjects: &[SubjectObs]) -> Option<(f64, Vec<f64>)> {
    if theta[0] < -40.0 || theta[2] < -40.0 || theta[3] < -60.0 {
        return None;
    }
    profile(layout, theta, subjects)
}

/// Best linear unbiased prediction `D Zᵀ V⁻¹ (y − Xβ)` of `(b0, b1)`.
///
/// Works for any subject, including those not used in the fit. Without any
/// observation the prior mean `(0, 0)` is returned and flagged.
pub fn predict_ranef_lmm(fit: &LmmFit, subject: &SubjectData) -> Result<RanefPrediction, MixedModelError> {
    let obs = to_obs(std::slice::from_ref(subject))?.remove(0);
    let flag = flag_for(&obs);
    if flag == RanefFlag::PriorMean {
        return Ok(RanefPrediction {
            values: vec![0.0, 0.0],
            flag,
        });
    }
    let comps = components_from_params(&fit.params())?;
    let values = gaussian::blup(&Layout::lmm(), &comps, &[fit.beta], &obs)
        .ok_or_else(|| MixedModelError::Numerical("lmm prediction".into()))?;
    Ok(RanefPrediction { values, flag })
}
