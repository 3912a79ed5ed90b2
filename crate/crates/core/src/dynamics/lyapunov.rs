use serde::{Deserialize, Serialize};

use super::flows::{integrate_rk4, FlowMap};
use super::maps::MapSystem;
use crate::{invalid, Error, Result, StateVector};

pub const DEFAULT_RENORM_INTERVAL: usize = 10;

/// A deterministic one-step evolution, as seen by the Lyapunov estimator.
pub trait Dynamics {
    fn dim(&self) -> usize;
    /// Advance by one step; `step` is the index of the step being taken.
    fn advance(&self, s: &StateVector, step: usize) -> Result<StateVector>;
    /// Physical time covered by one step (1 for maps).
    fn time_per_step(&self) -> f64 {
        1.0
    }
    fn in_domain(&self, s: &StateVector) -> bool {
        s.is_finite()
    }
    /// `a - b` in the state space's own geometry.
    fn separation(&self, a: &StateVector, b: &StateVector) -> StateVector {
        *a - *b
    }
}

impl Dynamics for MapSystem {
    fn dim(&self) -> usize {
        MapSystem::dim(self)
    }
    fn advance(&self, s: &StateVector, _step: usize) -> Result<StateVector> {
        self.step(s, 0.0)
    }
    fn in_domain(&self, s: &StateVector) -> bool {
        MapSystem::in_domain(self, s)
    }
}

impl Dynamics for FlowMap {
    fn dim(&self) -> usize {
        self.system.dim()
    }
    fn advance(&self, s: &StateVector, step: usize) -> Result<StateVector> {
        integrate_rk4(&self.system, s, step as f64 * self.dt, self.dt, self.substeps)
    }
    fn time_per_step(&self) -> f64 {
        self.dt
    }
    fn in_domain(&self, s: &StateVector) -> bool {
        self.system.in_domain(s)
    }
    fn separation(&self, a: &StateVector, b: &StateVector) -> StateVector {
        self.system.displacement(a, b)
    }
}

/// Wraps a closure as a map, mostly for test stubs.
pub struct FnMap<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> Dynamics for FnMap<F>
where
    F: Fn(&StateVector) -> StateVector,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn advance(&self, s: &StateVector, _step: usize) -> Result<StateVector> {
        let next = (self.f)(s);
        if next.is_finite() {
            Ok(next)
        } else {
            Err(Error::Divergence(format!("non-finite image of {s:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Nats per step for maps, nats per unit time for flows.
    pub lambda_max: f64,
    pub horizon: usize,
    pub renorm_interval: usize,
}

impl LyapunovResult {
    /// Lyapunov time `1 / λ_max` (infinite for non-positive exponents).
    pub fn lyapunov_time(&self) -> f64 {
        if self.lambda_max > 0.0 {
            1.0 / self.lambda_max
        } else {
            f64::INFINITY
        }
    }
}

pub fn lyapunov_max<D: Dynamics + ?Sized>(
    sys: &D,
    s0: &StateVector,
    horizon: usize,
    d0: f64,
) -> Result<LyapunovResult> {
    lyapunov_max_with(sys, s0, horizon, d0, DEFAULT_RENORM_INTERVAL)
}

/// Two-trajectory (Benettin) estimate of the maximal Lyapunov exponent.
///
/// The companion trajectory starts `d0` away along the diagonal and is pulled
/// back to distance `d0` every `renorm_interval` steps; the exponent is the
/// average log stretch per unit time.
pub fn lyapunov_max_with<D: Dynamics + ?Sized>(
    sys: &D,
    s0: &StateVector,
    horizon: usize,
    d0: f64,
    renorm_interval: usize,
) -> Result<LyapunovResult> {
    if horizon < 1000 {
        return Err(invalid(format!("horizon must be >= 1000, got {horizon}")));
    }
    if !(d0 > 0.0 && d0 <= 1e-8) {
        return Err(invalid(format!("d0 must lie in (0, 1e-8], got {d0}")));
    }
    if renorm_interval == 0 {
        return Err(invalid("renorm_interval must be positive"));
    }
    if !sys.in_domain(s0) {
        return Err(invalid(format!("initial state {s0:?} outside the domain")));
    }
    let dim = sys.dim();
    let diagonal = StateVector::new(&vec![1.0 / (dim as f64).sqrt(); dim]);
    let mut s = *s0;
    let mut p = offset_inside(sys, &s, &diagonal, d0)?;
    let mut log_sum = 0.0;
    for step in 0..horizon {
        s = sys.advance(&s, step)?;
        p = sys.advance(&p, step)?;
        let last = step + 1 == horizon;
        if (step + 1) % renorm_interval == 0 || last {
            let sep = sys.separation(&p, &s);
            let d = sep.norm();
            if d == 0.0 {
                // Trajectories merged in floating point: treat as full contraction
                // to the resolution of the state and restart along the diagonal.
                log_sum += (f64::EPSILON * s.norm().max(1.0) / d0).ln();
                p = offset_inside(sys, &s, &diagonal, d0)?;
                continue;
            }
            log_sum += (d / d0).ln();
            p = offset_inside(sys, &s, &sep.scale(1.0 / d), d0)?;
        }
    }
    let lambda_max = log_sum / (horizon as f64 * sys.time_per_step());
    if !lambda_max.is_finite() {
        return Err(Error::NonFinite("lyapunov estimate"));
    }
    Ok(LyapunovResult {
        lambda_max,
        horizon,
        renorm_interval,
    })
}

/// `s + d0 * dir`, flipping the direction if that would leave the domain.
fn offset_inside<D: Dynamics + ?Sized>(
    sys: &D,
    s: &StateVector,
    dir: &StateVector,
    d0: f64,
) -> Result<StateVector> {
    let plus = *s + dir.scale(d0);
    if sys.in_domain(&plus) {
        return Ok(plus);
    }
    let minus = *s - dir.scale(d0);
    if sys.in_domain(&minus) {
        return Ok(minus);
    }
    Err(Error::Divergence(format!("no in-domain perturbation of {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FlowSystem;

    #[test]
    fn identity_map_has_zero_exponent() {
        let id = FnMap {
            dim: 2,
            f: |s: &StateVector| *s,
        };
        let r = lyapunov_max(&id, &StateVector::xy(0.3, 0.4), 10_000, 1e-9).unwrap();
        assert!(r.lambda_max.abs() <= 1e-6, "{}", r.lambda_max);
    }

    #[test]
    fn period_one_logistic_is_contracting() {
        let r = lyapunov_max(&MapSystem::logistic(2.0), &StateVector::x(0.3), 10_000, 1e-9).unwrap();
        assert!(r.lambda_max < 0.0, "{}", r.lambda_max);
    }

    #[test]
    fn linear_expansion_rate_is_recovered() {
        // s -> 1.5 s on a bounded horizon stays finite and expands at ln 1.5.
        let lin = FnMap {
            dim: 1,
            f: |s: &StateVector| StateVector::x(s[0] * 1.5),
        };
        let r = lyapunov_max(&lin, &StateVector::x(0.0), 1000, 1e-9).unwrap();
        assert!((r.lambda_max - 1.5f64.ln()).abs() < 1e-6, "{}", r.lambda_max);
    }

    #[test]
    fn preconditions_are_enforced() {
        let sys = MapSystem::logistic(4.0);
        let s0 = StateVector::x(0.3);
        assert!(lyapunov_max(&sys, &s0, 999, 1e-9).is_err());
        assert!(lyapunov_max(&sys, &s0, 1000, 1e-6).is_err());
        assert!(lyapunov_max(&sys, &s0, 1000, 0.0).is_err());
        assert!(lyapunov_max(&sys, &StateVector::x(1.5), 1000, 1e-9).is_err());
    }

    #[test]
    fn abc_flow_is_chaotic() {
        let flow = FlowMap::new(FlowSystem::abc_default(), 0.01, 1);
        let r = lyapunov_max(&flow, &StateVector::xyz(0.1, 0.2, 0.3), 20_000, 1e-9).unwrap();
        assert!(r.lambda_max > 0.0, "{}", r.lambda_max);
    }
}
