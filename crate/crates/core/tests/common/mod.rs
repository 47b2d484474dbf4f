#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use prc::mixed::{LmmParams, MlpmmParams, SubjectData};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Correlated bivariate normal with covariance `c`.
pub fn bivariate(rng: &mut ChaCha8Rng, c: [[f64; 2]; 2]) -> [f64; 2] {
    let l00 = c[0][0].sqrt();
    let l10 = if l00 > 0.0 { c[0][1] / l00 } else { 0.0 };
    let l11 = (c[1][1] - l10 * l10).max(0.0).sqrt();
    let (z0, z1) = (normal(rng), normal(rng));
    [l00 * z0, l10 * z0 + l11 * z1]
}

pub fn simulate_lmm(rng: &mut ChaCha8Rng, p: &LmmParams, n: usize, ages: &[f64]) -> Vec<SubjectData> {
    (0..n)
        .map(|_| {
            let b = bivariate(rng, p.d);
            SubjectData::single(
                ages.iter()
                    .map(|&a| {
                        let y = p.beta[0] + b[0] + (p.beta[1] + b[1]) * a + p.sigma2_eps.sqrt() * normal(rng);
                        (a, y)
                    })
                    .collect(),
            )
        })
        .collect()
}

pub fn simulate_mlpmm(rng: &mut ChaCha8Rng, p: &MlpmmParams, n: usize, ages: &[f64]) -> Vec<SubjectData> {
    let r = p.beta.len();
    (0..n)
        .map(|_| {
            let u = bivariate(rng, p.sigma_u);
            SubjectData {
                items: (0..r)
                    .map(|q| {
                        let b = p.sigma2_b[q].sqrt() * normal(rng);
                        ages.iter()
                            .map(|&a| {
                                let y = p.beta[q][0] + u[0] + b + (p.beta[q][1] + u[1]) * a
                                    + p.sigma2_eps[q].sqrt() * normal(rng);
                                (a, y)
                            })
                            .collect()
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Random small instance: up to `max_visits` visits per item, random ages, random missingness.
pub fn random_subjects(rng: &mut ChaCha8Rng, n: usize, r: usize, max_visits: usize) -> Vec<SubjectData> {
    (0..n)
        .map(|_| SubjectData {
            items: (0..r)
                .map(|_| {
                    let m = rng.random_range(0..=max_visits);
                    (0..m)
                        .map(|_| (rng.random_range(0.0..5.0), rng.random_range(-3.0..3.0)))
                        .collect()
                })
                .collect(),
        })
        .collect()
}

pub fn random_mlpmm_params(rng: &mut ChaCha8Rng, r: usize) -> MlpmmParams {
    let l10: f64 = rng.random_range(-1.0..1.0);
    let l11: f64 = rng.random_range(0.1..1.0);
    MlpmmParams {
        beta: (0..r).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
        sigma_u: [[1.0, l10], [l10, l10 * l10 + l11 * l11]],
        sigma2_b: (0..r).map(|_| rng.random_range(0.0..1.5)).collect(),
        sigma2_eps: (0..r).map(|_| rng.random_range(0.2..2.0)).collect(),
    }
}

pub fn random_lmm_params(rng: &mut ChaCha8Rng) -> LmmParams {
    let l00: f64 = rng.random_range(0.1..1.5);
    let l10: f64 = rng.random_range(-1.0..1.0);
    let l11: f64 = rng.random_range(0.1..1.0);
    LmmParams {
        beta: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        d: [[l00 * l00, l00 * l10], [l00 * l10, l10 * l10 + l11 * l11]],
        sigma2_eps: rng.random_range(0.2..2.0),
    }
}

/// Stacked rows `(item, age, value)` of one subject.
fn rows(s: &SubjectData) -> Vec<(usize, f64, f64)> {
    s.items
        .iter()
        .enumerate()
        .flat_map(|(q, pairs)| pairs.iter().map(move |&(a, y)| (q, a, y)))
        .collect()
}

/// Dense mean and covariance of the observations, plus the covariance
/// between the random effects `(u0, u1, b_1..b_r)` and the observations.
fn dense_mlpmm(p: &MlpmmParams, s: &SubjectData) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let rows = rows(s);
    let n = rows.len();
    let r = p.beta.len();
    let y = DVector::from_iterator(n, rows.iter().map(|x| x.2));
    let mu = DVector::from_iterator(n, rows.iter().map(|&(q, a, _)| p.beta[q][0] + p.beta[q][1] * a));
    let su = &p.sigma_u;
    let v = DMatrix::from_fn(n, n, |i, j| {
        let (qi, ai, _) = rows[i];
        let (qj, aj, _) = rows[j];
        let mut c = su[0][0] + su[0][1] * (ai + aj) + su[1][1] * ai * aj;
        if qi == qj {
            c += p.sigma2_b[qi];
            if i == j {
                c += p.sigma2_eps[qi];
            }
        }
        c
    });
    let cov = DMatrix::from_fn(2 + r, n, |e, j| {
        let (qj, aj, _) = rows[j];
        match e {
            0 => su[0][0] + su[0][1] * aj,
            1 => su[1][0] + su[1][1] * aj,
            _ if e - 2 == qj => p.sigma2_b[qj],
            _ => 0.0,
        }
    });
    (y, mu, v, cov)
}

pub fn oracle_mlpmm_loglik(p: &MlpmmParams, data: &[SubjectData]) -> f64 {
    data.iter()
        .filter(|s| s.items.iter().any(|i| !i.is_empty()))
        .map(|s| {
            let (y, mu, v, _) = dense_mlpmm(p, s);
            mvn_logpdf(&(y - mu), &v)
        })
        .sum()
}

pub fn oracle_mlpmm_blup(p: &MlpmmParams, s: &SubjectData) -> Vec<f64> {
    let (y, mu, v, cov) = dense_mlpmm(p, s);
    let vinv = v.try_inverse().expect("invertible");
    (cov * vinv * (y - mu)).iter().copied().collect()
}

/// The LMM is the single-item MLPMM with `Σ_u = D` and no item effect.
fn as_mlpmm(p: &LmmParams) -> MlpmmParams {
    MlpmmParams {
        beta: vec![p.beta],
        sigma_u: p.d,
        sigma2_b: vec![0.0],
        sigma2_eps: vec![p.sigma2_eps],
    }
}

pub fn oracle_lmm_loglik(p: &LmmParams, data: &[SubjectData]) -> f64 {
    oracle_mlpmm_loglik(&as_mlpmm(p), data)
}

pub fn oracle_lmm_blup(p: &LmmParams, s: &SubjectData) -> Vec<f64> {
    oracle_mlpmm_blup(&as_mlpmm(p), s)[..2].to_vec()
}

pub fn mvn_logpdf(r: &DVector<f64>, v: &DMatrix<f64>) -> f64 {
    let n = r.len() as f64;
    let chol = v.clone().cholesky().expect("positive definite");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let sol = chol.solve(r);
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + r.dot(&sol))
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}
