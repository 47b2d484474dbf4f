//! Marginal Gaussian likelihood shared by the LMM and the MLPMM.
//!
//! Both models are instances of
//!
//! ```text
//! y_qij = β_q0 + β_q1 a_ij + w_q(a_ij)ᵀ η_i + ε_qij,  η_i ~ N(0, G),  ε_qij ~ N(0, s_q)
//! ```
//!
//! where `w_q(a)` loads the random-effect vector through columns that carry
//! either `1` or `a`. The covariance of one subject's stacked observations is
//! `V = Z G Zᵀ + R` with diagonal `R`, so every per-subject quantity reduces
//! to `k × k` algebra with `G = ΛΛᵀ`:
//!
//! ```text
//! K = I + Λᵀ (Zᵀ R⁻¹ Z) Λ,  B = Λ K⁻¹ Λᵀ = G (I + M G)⁻¹
//! log|V| = log|R| + log|K|,  V⁻¹ = R⁻¹ − R⁻¹ Z B Zᵀ R⁻¹
//! ```
//!
//! `Λ` may be singular, which keeps boundary fits (zero variances) well defined.

use std::f64::consts::PI;

/// Random-effect design: `k` effects, and for each item the columns it loads.
/// A load `(col, 0)` multiplies effect `col` by 1, `(col, 1)` by the age.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub k: usize,
    pub loads: Vec<Vec<(usize, usize)>>,
}

impl Layout {
    /// Correlated random intercept and slope for a single item.
    pub fn lmm() -> Self {
        Layout {
            k: 2,
            loads: vec![vec![(0, 0), (1, 1)]],
        }
    }

    /// Shared intercept/slope `(u0, u1)` plus one random intercept per item.
    pub fn mlpmm(r: usize) -> Self {
        Layout {
            k: 2 + r,
            loads: (0..r).map(|q| vec![(0, 0), (1, 1), (2 + q, 0)]).collect(),
        }
    }

    pub fn n_items(&self) -> usize {
        self.loads.len()
    }
}

/// Non-missing observations of one item for one subject.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ItemObs {
    pub item: usize,
    pub ages: Vec<f64>,
    pub values: Vec<f64>,
    /// `[[n, Σa], [Σa, Σa²]]`
    pub xtx: [[f64; 2]; 2],
}

impl ItemObs {
    pub fn new(item: usize, ages: Vec<f64>, values: Vec<f64>) -> Self {
        let (mut sa, mut saa) = (0.0, 0.0);
        for &a in &ages {
            sa += a;
            saa += a * a;
        }
        let n = ages.len() as f64;
        ItemObs {
            item,
            ages,
            values,
            xtx: [[n, sa], [sa, saa]],
        }
    }

    fn n(&self) -> f64 {
        self.xtx[0][0]
    }

    /// `Xᵀ y` for this item's rows.
    fn xty(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for (&a, &y) in self.ages.iter().zip(&self.values) {
            c[0] += y;
            c[1] += a * y;
        }
        c
    }

    /// `(Xᵀ r, rᵀ r)` for residuals `r = y − β0 − β1 a`.
    fn residual_moments(&self, beta: [f64; 2]) -> ([f64; 2], f64) {
        let (mut g0, mut g1, mut e) = (0.0, 0.0, 0.0);
        for (&a, &y) in self.ages.iter().zip(&self.values) {
            let r = y - beta[0] - beta[1] * a;
            g0 += r;
            g1 += a * r;
            e += r * r;
        }
        ([g0, g1], e)
    }
}

/// All observed items of one subject.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct SubjectObs {
    pub items: Vec<ItemObs>,
}

impl SubjectObs {
    pub fn is_empty(&self) -> bool {
        self.items.iter().all(|it| it.ages.is_empty())
    }

    /// Number of distinct visit ages across all items.
    pub fn distinct_ages(&self) -> usize {
        let mut ages: Vec<f64> = self.items.iter().flat_map(|it| it.ages.iter().copied()).collect();
        ages.sort_by(f64::total_cmp);
        ages.dedup();
        ages.len()
    }
}

/// Variance components: `G = ΛΛᵀ` (row-major `k × k`) and per-item residual variances.
#[derive(Debug, Clone)]
pub(crate) struct Components {
    pub lambda: Vec<f64>,
    pub resid: Vec<f64>,
}

/// Per-subject quantities that depend only on the variance components.
pub(crate) struct Prepared {
    m: Vec<f64>,
    b: Vec<f64>,
    logdet_k: Vec<f64>,
}

pub(crate) struct Evaluation {
    pub loglik: f64,
    /// ∂ℓ/∂G, symmetric `k × k`.
    pub grad_g: Vec<f64>,
    pub grad_resid: Vec<f64>,
    pub grad_beta: Vec<[f64; 2]>,
}

/// Computes `M = Zᵀ R⁻¹ Z` for one subject into `m`.
fn fill_m(layout: &Layout, resid: &[f64], subject: &SubjectObs, m: &mut [f64]) {
    let k = layout.k;
    m.iter_mut().for_each(|v| *v = 0.0);
    for it in &subject.items {
        let w = 1.0 / resid[it.item];
        let loads = &layout.loads[it.item];
        for &(c1, u) in loads {
            for &(c2, v) in loads {
                m[c1 * k + c2] += w * it.xtx[u][v];
            }
        }
    }
}

pub(crate) fn prepare(layout: &Layout, comps: &Components, subjects: &[SubjectObs]) -> Option<Prepared> {
    let k = layout.k;
    let kk = k * k;
    let mut out = Prepared {
        m: vec![0.0; subjects.len() * kk],
        b: vec![0.0; subjects.len() * kk],
        logdet_k: vec![0.0; subjects.len()],
    };
    let lam = &comps.lambda;
    let mut tmp = vec![0.0; kk];
    let mut kmat = vec![0.0; kk];
    let mut kinv = vec![0.0; kk];
    for (i, subject) in subjects.iter().enumerate() {
        let m = &mut out.m[i * kk..(i + 1) * kk];
        fill_m(layout, &comps.resid, subject, m);
        // tmp = M Λ
        matmul(m, lam, &mut tmp, k);
        // K = I + Λᵀ M Λ
        for r in 0..k {
            for c in 0..k {
                let mut s = 0.0;
                for l in 0..k {
                    s += lam[l * k + r] * tmp[l * k + c];
                }
                kmat[r * k + c] = s + if r == c { 1.0 } else { 0.0 };
            }
        }
        if !cholesky(&mut kmat, k) {
            return None;
        }
        out.logdet_k[i] = 2.0 * (0..k).map(|d| kmat[d * k + d].ln()).sum::<f64>();
        chol_inverse(&kmat, &mut kinv, k);
        // B = Λ K⁻¹ Λᵀ
        matmul(lam, &kinv, &mut tmp, k);
        let b = &mut out.b[i * kk..(i + 1) * kk];
        for r in 0..k {
            for c in 0..k {
                let mut s = 0.0;
                for l in 0..k {
                    s += tmp[r * k + l] * lam[c * k + l];
                }
                b[r * k + c] = s;
            }
        }
    }
    Some(out)
}

/// Generalized least squares fixed effects given the variance components.
pub(crate) fn gls_beta(
    layout: &Layout,
    comps: &Components,
    prepared: &Prepared,
    subjects: &[SubjectObs],
) -> Option<Vec<[f64; 2]>> {
    let k = layout.k;
    let r = layout.n_items();
    let p = 2 * r;
    let mut xvx = vec![0.0; p * p];
    let mut xvy = vec![0.0; p];
    let mut f = vec![0.0; r * k * 2];
    let mut mc = vec![0.0; k];
    let mut bf = vec![0.0; k * 2];
    for (i, subject) in subjects.iter().enumerate() {
        let b = &prepared.b[i * k * k..(i + 1) * k * k];
        mc.iter_mut().for_each(|v| *v = 0.0);
        for it in &subject.items {
            let q = it.item;
            let w = 1.0 / comps.resid[q];
            let c = it.xty();
            // F_q = w P_q S_q (k × 2)
            let fq = &mut f[q * k * 2..(q + 1) * k * 2];
            fq.iter_mut().for_each(|v| *v = 0.0);
            for &(col, u) in &layout.loads[q] {
                fq[col * 2] += w * it.xtx[u][0];
                fq[col * 2 + 1] += w * it.xtx[u][1];
                mc[col] += w * c[u];
            }
            for u in 0..2 {
                for v in 0..2 {
                    xvx[(2 * q + u) * p + 2 * q + v] += w * it.xtx[u][v];
                }
                xvy[2 * q + u] += w * c[u];
            }
        }
        for it2 in &subject.items {
            let q2 = it2.item;
            let f2 = &f[q2 * k * 2..(q2 + 1) * k * 2];
            // bf = B F_q2
            for row in 0..k {
                for v in 0..2 {
                    let mut s = 0.0;
                    for l in 0..k {
                        s += b[row * k + l] * f2[l * 2 + v];
                    }
                    bf[row * 2 + v] = s;
                }
            }
            for it1 in &subject.items {
                let q1 = it1.item;
                let f1 = &f[q1 * k * 2..(q1 + 1) * k * 2];
                for u in 0..2 {
                    for v in 0..2 {
                        let mut s = 0.0;
                        for l in 0..k {
                            s += f1[l * 2 + u] * bf[l * 2 + v];
                        }
                        xvx[(2 * q1 + u) * p + 2 * q2 + v] -= s;
                    }
                }
            }
            // Xᵀ V⁻¹ y correction: F_q2ᵀ B m_c
            for v in 0..2 {
                let mut s = 0.0;
                for l in 0..k {
                    let mut bm = 0.0;
                    for c in 0..k {
                        bm += b[l * k + c] * mc[c];
                    }
                    s += f2[l * 2 + v] * bm;
                }
                xvy[2 * q2 + v] -= s;
            }
        }
    }
    if !cholesky(&mut xvx, p) {
        return None;
    }
    chol_solve(&xvx, &mut xvy, p);
    Some((0..r).map(|q| [xvy[2 * q], xvy[2 * q + 1]]).collect())
}

pub(crate) fn evaluate(
    layout: &Layout,
    comps: &Components,
    beta: &[[f64; 2]],
    prepared: &Prepared,
    subjects: &[SubjectObs],
    want_grad: bool,
) -> Evaluation {
    let k = layout.k;
    let kk = k * k;
    let r = layout.n_items();
    let log_resid: Vec<f64> = comps.resid.iter().map(|s| s.ln()).collect();
    let mut ev = Evaluation {
        loglik: 0.0,
        grad_g: vec![0.0; kk],
        grad_resid: vec![0.0; r],
        grad_beta: vec![[0.0; 2]; r],
    };
    let mut h = vec![0.0; k];
    let mut eta = vec![0.0; k];
    let mut t = vec![0.0; k];
    let mut mb = vec![0.0; kk];
    let mut moments: Vec<([f64; 2], f64)> = Vec::new();
    for (i, subject) in subjects.iter().enumerate() {
        let m = &prepared.m[i * kk..(i + 1) * kk];
        let b = &prepared.b[i * kk..(i + 1) * kk];
        h.iter_mut().for_each(|v| *v = 0.0);
        let mut rho = 0.0;
        let mut n_obs = 0.0;
        let mut logdet_r = 0.0;
        moments.clear();
        for it in &subject.items {
            let q = it.item;
            let w = 1.0 / comps.resid[q];
            let (g, e) = it.residual_moments(beta[q]);
            for &(col, u) in &layout.loads[q] {
                h[col] += w * g[u];
            }
            rho += w * e;
            n_obs += it.n();
            logdet_r += it.n() * log_resid[q];
            moments.push((g, e));
        }
        matvec(b, &h, &mut eta, k);
        let quad = rho - dot(&h, &eta);
        ev.loglik += -0.5 * (n_obs * (2.0 * PI).ln() + logdet_r + prepared.logdet_k[i] + quad);
        if !want_grad {
            continue;
        }
        // t = Zᵀ V⁻¹ r = h − M η̂
        matvec(m, &eta, &mut t, k);
        for c in 0..k {
            t[c] = h[c] - t[c];
        }
        // ∂ℓ/∂G += ½ (t tᵀ − (M − M B M))
        matmul(m, b, &mut mb, k);
        for row in 0..k {
            for col in 0..k {
                let mut mbm = 0.0;
                for l in 0..k {
                    mbm += mb[row * k + l] * m[l * k + col];
                }
                let n_rc = m[row * k + col] - mbm;
                ev.grad_g[row * k + col] += 0.5 * (t[row] * t[col] - n_rc);
            }
        }
        for (it, &(g, e)) in subject.items.iter().zip(&moments) {
            let q = it.item;
            let s = comps.resid[q];
            let loads = &layout.loads[q];
            // P_qᵀ η̂
            let mut pe = [0.0; 2];
            for &(col, u) in loads {
                pe[u] += eta[col];
            }
            let spe = [
                it.xtx[0][0] * pe[0] + it.xtx[0][1] * pe[1],
                it.xtx[1][0] * pe[0] + it.xtx[1][1] * pe[1],
            ];
            let alpha_sq = (e - 2.0 * (pe[0] * g[0] + pe[1] * g[1]) + pe[0] * spe[0] + pe[1] * spe[1]) / (s * s);
            let mut tr_bpsp = 0.0;
            for &(c1, u) in loads {
                for &(c2, v) in loads {
                    tr_bpsp += b[c1 * k + c2] * it.xtx[u][v];
                }
            }
            let tr_vinv = it.n() / s - tr_bpsp / (s * s);
            ev.grad_resid[q] += 0.5 * (alpha_sq - tr_vinv);
            ev.grad_beta[q][0] += (g[0] - spe[0]) / s;
            ev.grad_beta[q][1] += (g[1] - spe[1]) / s;
        }
    }
    ev
}

/// Conditional mean of the random effects given one subject's observations.
pub(crate) fn blup(layout: &Layout, comps: &Components, beta: &[[f64; 2]], subject: &SubjectObs) -> Option<Vec<f64>> {
    let k = layout.k;
    if subject.is_empty() {
        return Some(vec![0.0; k]);
    }
    let prepared = prepare(layout, comps, std::slice::from_ref(subject))?;
    let mut h = vec![0.0; k];
    for it in &subject.items {
        let w = 1.0 / comps.resid[it.item];
        let (g, _) = it.residual_moments(beta[it.item]);
        for &(col, u) in &layout.loads[it.item] {
            h[col] += w * g[u];
        }
    }
    let mut eta = vec![0.0; k];
    matvec(&prepared.b, &h, &mut eta, k);
    Some(eta)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(a: &[f64], x: &[f64], out: &mut [f64], k: usize) {
    for r in 0..k {
        out[r] = dot(&a[r * k..(r + 1) * k], x);
    }
}

fn matmul(a: &[f64], b: &[f64], out: &mut [f64], k: usize) {
    for r in 0..k {
        for c in 0..k {
            let mut s = 0.0;
            for l in 0..k {
                s += a[r * k + l] * b[l * k + c];
            }
            out[r * k + c] = s;
        }
    }
}

/// In-place lower Cholesky of a row-major symmetric matrix. Returns false
/// if the matrix is not numerically positive definite.
pub(crate) fn cholesky(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for l in 0..j {
            d -= a[j * n + l] * a[j * n + l];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for l in 0..j {
                s -= a[i * n + l] * a[j * n + l];
            }
            a[i * n + j] = s / d;
        }
        for c in j + 1..n {
            a[j * n + c] = 0.0;
        }
    }
    true
}

pub(crate) fn chol_solve(l: &[f64], b: &mut [f64], n: usize) {
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * n + j] * b[j];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= l[j * n + i] * b[j];
        }
        b[i] = s / l[i * n + i];
    }
}

fn chol_inverse(l: &[f64], out: &mut [f64], n: usize) {
    let mut col = vec![0.0; n];
    for c in 0..n {
        col.iter_mut().enumerate().for_each(|(i, v)| *v = if i == c { 1.0 } else { 0.0 });
        chol_solve(l, &mut col, n);
        for r in 0..n {
            out[r * n + c] = col[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_roundtrip() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut l = a;
        assert!(cholesky(&mut l, 3));
        let mut rebuilt = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rebuilt[r * 3 + c] = (0..3).map(|k| l[r * 3 + k] * l[c * 3 + k]).sum();
            }
        }
        for (x, y) in a.iter().zip(&rebuilt) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut b = [1.0, 2.0, 3.0];
        chol_solve(&l, &mut b, 3);
        for r in 0..3 {
            let ax: f64 = (0..3).map(|c| a[r * 3 + c] * b[c]).sum();
            assert!((ax - [1.0, 2.0, 3.0][r]).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let mut a = [1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky(&mut a, 2));
    }
}
