//! Breslow partial likelihood on time-sorted data.
//!
//! Subjects are kept in ascending time order and grouped by distinct time.
//! The risk set of group `g` is every subject in groups `g..`. All sums use
//! `w_i = exp(η_i − max η)` so the risk-set totals cannot overflow.

/// Time-sorted outcome with tie groups.
#[derive(Debug, Clone)]
pub(crate) struct RiskSets {
    pub n: usize,
    /// Original row of each sorted position.
    pub order: Vec<usize>,
    pub event: Vec<bool>,
    /// `[start, end)` of each distinct-time group, and its event count.
    pub groups: Vec<(usize, usize, f64)>,
}

impl RiskSets {
    pub fn new(time: &[f64], event: &[bool]) -> Self {
        let n = time.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[a].total_cmp(&time[b]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        while start < n {
            let t = time[order[start]];
            let mut end = start;
            let mut d = 0.0;
            while end < n && time[order[end]] == t {
                if event[order[end]] {
                    d += 1.0;
                }
                end += 1;
            }
            groups.push((start, end, d));
            start = end;
        }
        RiskSets {
            n,
            event: order.iter().map(|&i| event[i]).collect(),
            order,
            groups,
        }
    }

    /// Reorders a per-row vector into sorted positions.
    pub fn sort<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| v[i]).collect()
    }
}

/// Risk-set quantities at one linear predictor (sorted order).
#[derive(Debug, Clone)]
pub(crate) struct RiskState {
    pub w: Vec<f64>,
    /// Per subject, `Σ_{groups up to its own} d_g / S_g` on the shifted scale.
    pub a: Vec<f64>,
    /// Per group, `d_g / S_g²` on the shifted scale.
    pub dss: Vec<f64>,
    /// `−ℓ`
    pub loss: f64,
    /// `∂(−ℓ)/∂η`
    pub grad: Vec<f64>,
}

pub(crate) fn negloglik(rs: &RiskSets, eta: &[f64]) -> f64 {
    let n = rs.n;
    if n == 0 {
        return 0.0;
    }
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    let mut loss = 0.0;
    for &(start, end, d) in rs.groups.iter().rev() {
        for i in start..end {
            s += (eta[i] - m).exp();
        }
        if d > 0.0 {
            loss += d * (s.ln() + m);
            for i in start..end {
                if rs.event[i] {
                    loss -= eta[i];
                }
            }
        }
    }
    loss
}

impl RiskState {
    pub fn new(rs: &RiskSets, eta: &[f64]) -> Self {
        let n = rs.n;
        let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = if m.is_finite() { m } else { 0.0 };
        let w: Vec<f64> = eta.iter().map(|e| (e - m).exp()).collect();
        let ng = rs.groups.len();
        let mut s = vec![0.0; ng];
        let mut acc = 0.0;
        for (g, &(start, end, _)) in rs.groups.iter().enumerate().rev() {
            acc += w[start..end].iter().sum::<f64>();
            s[g] = acc;
        }
        let mut loss = 0.0;
        let mut a = vec![0.0; n];
        let mut dss = vec![0.0; ng];
        let mut cum = 0.0;
        for (g, &(start, end, d)) in rs.groups.iter().enumerate() {
            if d > 0.0 {
                cum += d / s[g];
                dss[g] = d / (s[g] * s[g]);
                loss += d * (s[g].ln() + m);
            }
            for i in start..end {
                a[i] = cum;
                if rs.event[i] {
                    loss -= eta[i];
                }
            }
        }
        let grad = (0..n)
            .map(|i| w[i] * a[i] - if rs.event[i] { 1.0 } else { 0.0 })
            .collect();
        RiskState { w, a, dss, loss, grad }
    }

    /// `W v` with `W = ∂²(−ℓ)/∂η∂ηᵀ`.
    pub fn hess_times(&self, rs: &RiskSets, v: &[f64], out: &mut [f64]) {
        let ng = rs.groups.len();
        // c_g = Σ_{risk set of g} w_j v_j, then e_g = Σ_{g' ≤ g} d/S² c_g'
        let mut c = vec![0.0; ng];
        let mut acc = 0.0;
        for (g, &(start, end, _)) in rs.groups.iter().enumerate().rev() {
            for i in start..end {
                acc += self.w[i] * v[i];
            }
            c[g] = acc;
        }
        let mut e = 0.0;
        for (g, &(start, end, _)) in rs.groups.iter().enumerate() {
            e += self.dss[g] * c[g];
            for i in start..end {
                out[i] = self.w[i] * (self.a[i] * v[i] - e);
            }
        }
    }
}
