//! Quantile regression with the κ-smoothed (Huber) check function.
//!
//! Pairing convention: prediction `i` sits at fraction `τ_i = (i + 0.5) / N`
//! (0-based `i`) and is compared against every target sample `j`, with
//! `u_ij = target_j - pred_i`. The loss is
//!
//! `Σ_i mean_j |τ_i - 1{u_ij < 0}| · H_κ(u_ij) / κ`
//!
//! where `H_κ(u) = u²/2` for `|u| ≤ κ` and `κ(|u| - κ/2)` otherwise. With as
//! many targets as quantiles this is `(1/N) Σ_i Σ_j`.

use serde::{Deserialize, Serialize};

/// `N` quantile locations at the implied fractions `τ_i = (i + 0.5) / N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileDistribution {
    pub locations: Vec<f64>,
}

impl QuantileDistribution {
    pub fn new(locations: Vec<f64>) -> Self {
        Self { locations }
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn mean(&self) -> f64 {
        self.locations.iter().sum::<f64>() / self.n() as f64
    }

    pub fn fractions(&self) -> Vec<f64> {
        taus(self.n())
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.locations.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

pub fn tau(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

pub fn taus(n: usize) -> Vec<f64> {
    (0..n).map(|i| tau(i, n)).collect()
}

pub fn huber(u: f64, kappa: f64) -> f64 {
    let a = u.abs();
    if a <= kappa {
        0.5 * u * u
    } else {
        kappa * (a - 0.5 * kappa)
    }
}

/// Direct double loop over (prediction, target) pairs.
pub fn quantile_huber_loss_naive(pred: &[f64], targets: &[f64], kappa: f64) -> f64 {
    assert!(kappa > 0.0, "kappa must be positive");
    let n = pred.len();
    let m = targets.len() as f64;
    let mut total = 0.0;
    for (i, &p) in pred.iter().enumerate() {
        let t_i = tau(i, n);
        let mut acc = 0.0;
        for &t in targets {
            let u = t - p;
            let w = if u < 0.0 { 1.0 - t_i } else { t_i };
            acc += w * huber(u, kappa) / kappa;
        }
        total += acc / m;
    }
    total
}

pub fn quantile_huber_loss(pred: &[f64], targets: &[f64], kappa: f64) -> f64 {
    let mut scratch = vec![0.0; pred.len()];
    quantile_huber_loss_grad(pred, targets, kappa, &mut scratch)
}

/// Loss and its gradient with respect to `pred` (written into `dpred`).
///
/// Sorts both sides and sweeps with prefix sums of `t` and `t²`, so the cost
/// is `O(N log N + M log M)` rather than `O(N M)`.
pub fn quantile_huber_loss_grad(pred: &[f64], targets: &[f64], kappa: f64, dpred: &mut [f64]) -> f64 {
    assert!(kappa > 0.0, "kappa must be positive");
    assert_eq!(pred.len(), dpred.len());
    let mut sorted = targets.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let m = sorted.len();
    let mut s1 = Vec::with_capacity(m + 1);
    let mut s2 = Vec::with_capacity(m + 1);
    s1.push(0.0);
    s2.push(0.0);
    for &t in &sorted {
        s1.push(s1.last().unwrap() + t);
        s2.push(s2.last().unwrap() + t * t);
    }
    let mf = m as f64;
    let n = pred.len();
    // Visit predictions in increasing order so the three region boundaries
    // only ever move right.
    let mut order: Vec<(f64, usize)> = pred.iter().copied().zip(0..n).collect();
    order.sort_unstable_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let inv_k = 1.0 / kappa;
    let inv_n = 1.0 / n as f64;
    let inv_m = 1.0 / mf;
    let (mut a, mut b, mut c) = (0usize, 0usize, 0usize);
    let mut total = 0.0;
    for &(p, i) in &order {
        let t_i = (i as f64 + 0.5) * inv_n;
        // [0,a) t < p-κ; [a,b) p-κ <= t < p; [b,c) p <= t <= p+κ; [c,m) t > p+κ
        while a < m && sorted[a] < p - kappa {
            a += 1;
        }
        while b < m && sorted[b] < p {
            b += 1;
        }
        while c < m && sorted[c] <= p + kappa {
            c += 1;
        }
        let sum = |lo: usize, hi: usize| (s1[hi] - s1[lo], s2[hi] - s2[lo], (hi - lo) as f64);
        let (l1, _, n1) = sum(0, a);
        let (l2, q2, n2) = sum(a, b);
        let (l3, q3, n3) = sum(b, c);
        let (l4, _, n4) = sum(c, m);
        // Σ (t - p)² over a region = Σt² - 2pΣt + n p²
        let sq = |lin: f64, quad: f64, cnt: f64| (quad - 2.0 * p * lin + cnt * p * p).max(0.0);
        let loss = (1.0 - t_i) * (n1 * (p - 0.5 * kappa) - l1)
            + (1.0 - t_i) * 0.5 * sq(l2, q2, n2) * inv_k
            + t_i * 0.5 * sq(l3, q3, n3) * inv_k
            + t_i * (l4 - n4 * (p + 0.5 * kappa));
        let grad = (1.0 - t_i) * n1
            + (1.0 - t_i) * (n2 * p - l2) * inv_k
            + t_i * (n3 * p - l3) * inv_k
            - t_i * n4;
        total += loss;
        dpred[i] = grad * inv_m;
    }
    total * inv_m
}
