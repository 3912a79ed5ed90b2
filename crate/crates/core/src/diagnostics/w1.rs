use crate::{invalid, Error, Result};

/// Exact 1-Wasserstein distance between two equal-size empirical measures
/// given as ascending samples: `(1/n) Σ |x_(i) - y_(i)|`.
pub fn w1_empirical(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            context: "w1_empirical",
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(invalid("w1_empirical needs at least one sample"));
    }
    if !is_sorted(x) || !is_sorted(y) {
        return Err(invalid("w1_empirical expects ascending samples"));
    }
    let total: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / x.len() as f64)
}

/// [`w1_empirical`] on copies of unsorted samples.
pub fn w1_unsorted(x: &[f64], y: &[f64]) -> Result<f64> {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    w1_empirical(&a, &b)
}

fn is_sorted(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}
