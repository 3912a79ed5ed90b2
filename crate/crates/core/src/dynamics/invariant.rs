use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::maps::MapSystem;
use crate::harness::csvfmt::fmt_f64;
use crate::{invalid, Result, StateVector};

pub const INVARIANT_HEADER: &str = "bin_left,bin_right,density";

/// Normalised occupancy histogram of an orbit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantHistogram {
    pub bin_edges: Vec<f64>,
    /// Probability mass per bin; sums to one.
    pub mass: Vec<f64>,
    pub sample_count: usize,
}

impl InvariantHistogram {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.bin_edges[i + 1] - self.bin_edges[i]
    }

    /// Mass divided by bin width.
    pub fn density(&self) -> Vec<f64> {
        (0..self.bins()).map(|i| self.mass[i] / self.width(i)).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(INVARIANT_HEADER.split(','))?;
        for (i, d) in self.density().into_iter().enumerate() {
            w.write_record([fmt_f64(self.bin_edges[i]), fmt_f64(self.bin_edges[i + 1]), fmt_f64(d)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Total-variation distance to another histogram on the same bins.
    pub fn total_variation(&self, other: &InvariantHistogram) -> f64 {
        assert_eq!(self.bin_edges, other.bin_edges, "histograms on different bins");
        0.5 * self
            .mass
            .iter()
            .zip(&other.mass)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Occupancy histogram of a 1-D map's orbit on `[0, 1]`.
pub fn invariant_histogram(
    sys: &MapSystem,
    s0: &StateVector,
    burn_in: usize,
    samples: usize,
    bins: usize,
) -> Result<InvariantHistogram> {
    if sys.dim() != 1 {
        return Err(invalid(
            "invariant_histogram needs a 1-D map; use invariant_histogram_coord",
        ));
    }
    invariant_histogram_coord(sys, s0, burn_in, samples, bins, 0, (0.0, 1.0))
}

/// Occupancy histogram of coordinate `coord` over `range`. Visits outside the
/// range are counted in the nearest edge bin.
pub fn invariant_histogram_coord(
    sys: &MapSystem,
    s0: &StateVector,
    burn_in: usize,
    samples: usize,
    bins: usize,
    coord: usize,
    range: (f64, f64),
) -> Result<InvariantHistogram> {
    if burn_in < 1000 {
        return Err(invalid(format!("burn_in must be >= 1000, got {burn_in}")));
    }
    if samples < 100_000 {
        return Err(invalid(format!("samples must be >= 100000, got {samples}")));
    }
    if bins == 0 {
        return Err(invalid("bins must be positive"));
    }
    if coord >= sys.dim() {
        return Err(invalid(format!("coordinate {coord} out of range")));
    }
    let (lo, hi) = range;
    if !(hi > lo) {
        return Err(invalid("empty histogram range"));
    }
    if !sys.in_domain(s0) {
        return Err(invalid(format!("initial state {s0:?} outside the domain")));
    }
    let mut s = *s0;
    for _ in 0..burn_in {
        s = sys.step(&s, 0.0)?;
    }
    let mut counts = vec![0u64; bins];
    let scale = bins as f64 / (hi - lo);
    for _ in 0..samples {
        s = sys.step(&s, 0.0)?;
        let idx = ((s[coord] - lo) * scale).floor();
        let idx = idx.clamp(0.0, (bins - 1) as f64) as usize;
        counts[idx] += 1;
    }
    let bin_edges = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    let mass = counts
        .iter()
        .map(|&c| c as f64 / samples as f64)
        .collect();
    Ok(InvariantHistogram {
        bin_edges,
        mass,
        sample_count: samples,
    })
}

/// Exact mass of the arcsine law `1/(π√(x(1-x)))` on `[a, b] ⊂ [0, 1]`, the
/// invariant density of the fully chaotic logistic map.
pub fn arcsine_bin_mass(a: f64, b: f64) -> f64 {
    let cdf = |x: f64| 2.0 / PI * x.clamp(0.0, 1.0).sqrt().asin();
    cdf(b) - cdf(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_sums_to_one() {
        let h = invariant_histogram(&MapSystem::logistic(3.8), &StateVector::x(0.3), 1000, 100_000, 50)
            .unwrap();
        let total: f64 = h.mass.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert_eq!(h.bin_edges.len(), h.mass.len() + 1);
        assert!(h.bin_edges.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn histogram_is_reproducible() {
        let sys = MapSystem::logistic(4.0);
        let a = invariant_histogram(&sys, &StateVector::x(0.2), 1000, 100_000, 100).unwrap();
        let b = invariant_histogram(&sys, &StateVector::x(0.2), 1000, 100_000, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn arcsine_mass_is_a_probability() {
        assert!((arcsine_bin_mass(0.0, 1.0) - 1.0).abs() < 1e-15);
        assert!((arcsine_bin_mass(0.0, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn preconditions_are_enforced() {
        let sys = MapSystem::logistic(4.0);
        let s0 = StateVector::x(0.2);
        assert!(invariant_histogram(&sys, &s0, 999, 100_000, 10).is_err());
        assert!(invariant_histogram(&sys, &s0, 1000, 99_999, 10).is_err());
        assert!(invariant_histogram(&MapSystem::ikeda_default(), &StateVector::xy(0.0, 0.0), 1000, 100_000, 10).is_err());
    }
}
