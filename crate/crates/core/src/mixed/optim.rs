//! BFGS maximizer with backtracking (Armijo) line search.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub max_iter: usize,
    /// Relative change of the objective between accepted iterates.
    pub rel_tol: f64,
    /// ∞-norm of the gradient, or of the quasi-Newton step `H g` when the
    /// raw gradient cannot be resolved below this level in floating point.
    pub grad_tol: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            max_iter: 500,
            rel_tol: 1e-8,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct OptimResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Maximizes `f`, which returns the value and gradient (or `None` outside the domain).
pub(crate) fn maximize<F>(mut f: F, x0: Vec<f64>, config: &OptimConfig) -> Option<OptimResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return None;
    }
    let mut trace = vec![fx];
    let mut h = identity(n);
    let mut fresh_h = true;
    let mut iterations = 0;
    let mut converged = inf_norm(&g) < config.grad_tol;

    while !converged && iterations < config.max_iter {
        iterations += 1;
        // ascent direction d = H g
        let mut d: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * g[j]).sum()).collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope > 0.0) {
            h = identity(n);
            fresh_h = true;
            d = g.clone();
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        }
        let mut step = if fresh_h {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            if let Some((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && fn_ >= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if fresh_h || stationary(&h, &g, n, config.grad_tol) {
                break;
            }
            h = identity(n);
            fresh_h = true;
            continue;
        };
        // BFGS update for the maximization problem on -f
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh_h {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                h.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut h, &s, &y, sy, n);
            fresh_h = false;
        }
        let rel = (fn_ - fx).abs() / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        trace.push(fx);
        converged = rel < config.rel_tol && stationary(&h, &g, n, config.grad_tol);
    }
    if !converged {
        converged = stationary(&h, &g, n, config.grad_tol);
    }
    Some(OptimResult {
        x,
        iterations,
        converged,
        trace,
    })
}

/// For large samples the objective is flat to machine precision while the
/// raw gradient is still around `sqrt(eps |f| / H)`; the scaled gradient
/// `H g` measures the remaining distance to the optimum in parameter units.
fn stationary(h: &[f64], g: &[f64], n: usize, tol: f64) -> bool {
    if inf_norm(g) < tol {
        return true;
    }
    let step = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>().abs());
    step.fold(0.0_f64, f64::max) < tol
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
