//! Estimators for comparing how scalar values and return distributions vary
//! over state: one-step Lipschitz constants, truncated-return sensitivity,
//! loss and gradient landscapes, and quantile CDF/PDF surfaces.

mod landscape;
mod probe;
mod surface;
mod w1;

pub use landscape::{domain_grid, landscape_scan, local_relative_variance, LandscapeGrid, LandscapePoint};
pub use probe::{
    distributional_bound, estimate_onestep_constants, return_lipschitz_curve, scalar_return_bound,
    ClosedLoop, CurveSettings, EnvLoop, LipschitzProbe, OneStepLookahead, ProbeSettings,
    ReturnLipCurve, LIPCURVE_HEADER, PROBE_TEMPERATURE,
};
pub use surface::{distribution_surface, ActionChoice, DistributionSurface};
pub use w1::{w1_empirical, w1_unsorted};

/// Empirical quantile of ascending data by linear interpolation between order
/// statistics (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Column names for a state of dimension `dim`.
pub(crate) fn state_columns(dim: usize) -> &'static [&'static str] {
    &["x", "y", "z"][..dim.min(3)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates_order_statistics() {
        let v = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 8.0);
        // h = 3 * 0.5 = 1.5 -> halfway between 2 and 4
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&[5.0], 0.9), 5.0);
    }
}
