use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::{invalid, Error, Result, StateVector};

/// Anything RK4 can integrate.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn velocity(&self, s: &StateVector, t: f64) -> StateVector;
    /// Map a raw integrated state back into the domain.
    fn project(&self, s: StateVector) -> StateVector {
        s
    }
}

impl<F> VectorField for (usize, F)
where
    F: Fn(&StateVector, f64) -> StateVector,
{
    fn dim(&self) -> usize {
        self.0
    }
    fn velocity(&self, s: &StateVector, t: f64) -> StateVector {
        (self.1)(s, t)
    }
}

/// Continuous-time chaotic flows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowSystem {
    /// Time-periodic double gyre on `[0,2] x [0,1]`.
    DoubleGyre { a: f64, omega: f64, zeta: f64 },
    /// Arnold-Beltrami-Childress flow on the 2π-periodic 3-torus.
    Abc { a: f64, b: f64, c: f64 },
}

impl FlowSystem {
    /// A = 0.1, ω = 2π/10, ζ = 0.25.
    pub fn double_gyre_default() -> Self {
        FlowSystem::DoubleGyre {
            a: 0.1,
            omega: TAU / 10.0,
            zeta: 0.25,
        }
    }

    /// A = √3, B = √2, C = 1.
    pub fn abc_default() -> Self {
        FlowSystem::Abc {
            a: 3f64.sqrt(),
            b: 2f64.sqrt(),
            c: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FlowSystem::DoubleGyre { .. } => "double_gyre",
            FlowSystem::Abc { .. } => "abc",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FlowSystem::DoubleGyre { .. } => 2,
            FlowSystem::Abc { .. } => 3,
        }
    }

    /// Per-coordinate `(lo, hi)` bounds of the domain.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            FlowSystem::DoubleGyre { .. } => vec![(0.0, 2.0), (0.0, 1.0)],
            FlowSystem::Abc { .. } => vec![(0.0, TAU); 3],
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, FlowSystem::Abc { .. })
    }

    /// Whether the field depends on time.
    pub fn is_time_dependent(&self) -> bool {
        matches!(self, FlowSystem::DoubleGyre { zeta, .. } if *zeta != 0.0)
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            FlowSystem::DoubleGyre { omega, .. } if self.is_time_dependent() => Some(TAU / omega),
            _ => None,
        }
    }

    pub fn in_domain(&self, s: &StateVector) -> bool {
        s.dim() == self.dim()
            && s.is_finite()
            && match self {
                FlowSystem::DoubleGyre { .. } => {
                    (0.0..=2.0).contains(&s[0]) && (0.0..=1.0).contains(&s[1])
                }
                FlowSystem::Abc { .. } => s.as_slice().iter().all(|v| (0.0..TAU).contains(v)),
            }
    }

    /// Displacement `a - b`, using the minimum image on the torus.
    pub fn displacement(&self, a: &StateVector, b: &StateVector) -> StateVector {
        let mut d = *a - *b;
        if self.is_periodic() {
            d.as_mut_slice().iter_mut().for_each(|v| {
                *v -= TAU * (*v / TAU).round();
            });
        }
        d
    }

    pub fn distance(&self, a: &StateVector, b: &StateVector) -> f64 {
        self.displacement(a, b).norm()
    }

    /// Maximum speed of the field, sampled on a grid over the domain (and over
    /// one period for the time-dependent double gyre).
    pub fn max_speed(&self) -> f64 {
        let n = 48;
        let bounds = self.bounds();
        let times: Vec<f64> = match self.period() {
            Some(p) => (0..32).map(|i| p * i as f64 / 32.0).collect(),
            None => vec![0.0],
        };
        let axis = |d: usize, i: usize| {
            let (lo, hi) = bounds[d];
            lo + (hi - lo) * i as f64 / n as f64
        };
        let mut best: f64 = 0.0;
        for &t in &times {
            match self.dim() {
                2 => {
                    for i in 0..=n {
                        for j in 0..=n {
                            let s = StateVector::xy(axis(0, i), axis(1, j));
                            best = best.max(self.velocity(&s, t).norm());
                        }
                    }
                }
                _ => {
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..n {
                                let s = StateVector::xyz(axis(0, i), axis(1, j), axis(2, k));
                                best = best.max(self.velocity(&s, t).norm());
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

impl VectorField for FlowSystem {
    fn dim(&self) -> usize {
        FlowSystem::dim(self)
    }

    fn velocity(&self, s: &StateVector, t: f64) -> StateVector {
        match *self {
            FlowSystem::DoubleGyre { a, omega, zeta } => {
                let (x, y) = (s[0], s[1]);
                let wave = zeta * (omega * t).sin();
                let a_t = wave;
                let b_t = 1.0 - 2.0 * wave;
                let f = a_t * x * x + b_t * x;
                let df_dx = 2.0 * a_t * x + b_t;
                StateVector::xy(
                    -PI * a * (PI * f).sin() * (PI * y).cos(),
                    PI * a * (PI * f).cos() * (PI * y).sin() * df_dx,
                )
            }
            FlowSystem::Abc { a, b, c } => {
                let (x, y, z) = (s[0], s[1], s[2]);
                StateVector::xyz(
                    a * z.sin() + c * y.cos(),
                    b * x.sin() + a * z.cos(),
                    c * y.sin() + b * x.cos(),
                )
            }
        }
    }

    fn project(&self, s: StateVector) -> StateVector {
        match self {
            FlowSystem::DoubleGyre { .. } => {
                StateVector::xy(s[0].clamp(0.0, 2.0), s[1].clamp(0.0, 1.0))
            }
            FlowSystem::Abc { .. } => s.map(|v| {
                let w = v.rem_euclid(TAU);
                // rem_euclid can round up to exactly TAU for tiny negative inputs
                if w >= TAU {
                    0.0
                } else {
                    w
                }
            }),
        }
    }
}

/// Classical fourth-order Runge-Kutta advance of `s` from time `t` by `dt`,
/// split into `substeps` equal steps, followed by the field's projection.
pub fn integrate_rk4<F: VectorField + ?Sized>(
    field: &F,
    s: &StateVector,
    t: f64,
    dt: f64,
    substeps: usize,
) -> Result<StateVector> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid(format!("rk4 step must be positive, got {dt}")));
    }
    if substeps == 0 {
        return Err(invalid("rk4 needs at least one substep"));
    }
    let h = dt / substeps as f64;
    let mut x = *s;
    let mut time = t;
    for _ in 0..substeps {
        let k1 = field.velocity(&x, time);
        let k2 = field.velocity(&(x + k1 * (0.5 * h)), time + 0.5 * h);
        let k3 = field.velocity(&(x + k2 * (0.5 * h)), time + 0.5 * h);
        let k4 = field.velocity(&(x + k3 * h), time + h);
        x = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        time += h;
    }
    if !x.is_finite() {
        return Err(Error::Divergence(format!("rk4 produced non-finite state from {s:?}")));
    }
    Ok(field.project(x))
}

/// A flow sampled at a fixed time step, viewed as a discrete map.
#[derive(Clone, Copy, Debug)]
pub struct FlowMap {
    pub system: FlowSystem,
    pub dt: f64,
    pub substeps: usize,
}

impl FlowMap {
    pub fn new(system: FlowSystem, dt: f64, substeps: usize) -> Self {
        Self {
            system,
            dt,
            substeps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn exp_field() -> (usize, impl Fn(&StateVector, f64) -> StateVector) {
        (1, |s: &StateVector, _t: f64| *s)
    }

    #[test]
    fn double_gyre_steady_center_velocity() {
        let a = 0.1;
        let dg = FlowSystem::DoubleGyre {
            a,
            omega: TAU / 10.0,
            zeta: 0.0,
        };
        let v = dg.velocity(&StateVector::xy(1.0, 0.5), 0.0);
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], -PI * a, epsilon = 1e-12);
    }

    #[test]
    fn abc_unit_coefficients_at_origin() {
        let abc = FlowSystem::Abc { a: 1.0, b: 1.0, c: 1.0 };
        let v = abc.velocity(&StateVector::xyz(0.0, 0.0, 0.0), 0.0);
        assert_eq!(v.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn abc_is_divergence_free() {
        let abc = FlowSystem::abc_default();
        let h = 1e-6;
        for &(x, y, z) in &[(0.3, 1.2, 4.0), (2.0, 5.5, 0.7), (6.0, 0.1, 3.3)] {
            let s = StateVector::xyz(x, y, z);
            let mut div = 0.0;
            for d in 0..3 {
                let mut p = s;
                let mut m = s;
                p[d] += h;
                m[d] -= h;
                div += (abc.velocity(&p, 0.0)[d] - abc.velocity(&m, 0.0)[d]) / (2.0 * h);
            }
            assert_abs_diff_eq!(div, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn rk4_matches_exponential() {
        let s = integrate_rk4(&exp_field(), &StateVector::x(1.0), 0.0, 0.1, 1).unwrap();
        assert_abs_diff_eq!(s[0], 0.1f64.exp(), epsilon = 1e-7);
    }

    #[test]
    fn rk4_rejects_bad_step() {
        assert!(integrate_rk4(&exp_field(), &StateVector::x(1.0), 0.0, 0.0, 1).is_err());
        assert!(integrate_rk4(&exp_field(), &StateVector::x(1.0), 0.0, 0.1, 0).is_err());
    }

    #[test]
    fn rk4_reports_divergence() {
        let blowup = (1usize, |s: &StateVector, _t: f64| StateVector::x(s[0] * s[0] * 1e300));
        let err = integrate_rk4(&blowup, &StateVector::x(1e10), 0.0, 1.0, 1).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn abc_wraps_into_torus() {
        let abc = FlowSystem::abc_default();
        let mut s = StateVector::xyz(6.2, 0.01, 3.0);
        for i in 0..500 {
            s = integrate_rk4(&abc, &s, i as f64 * 0.01, 0.01, 1).unwrap();
            assert!(abc.in_domain(&s), "{s:?}");
        }
    }

    #[test]
    fn double_gyre_stays_in_box() {
        let dg = FlowSystem::double_gyre_default();
        let mut s = StateVector::xy(1.999, 0.999);
        for i in 0..1000 {
            s = integrate_rk4(&dg, &s, i as f64 * 0.01, 0.01, 1).unwrap();
            assert!(dg.in_domain(&s));
        }
    }

    #[test]
    fn torus_displacement_uses_minimum_image() {
        let abc = FlowSystem::abc_default();
        let a = StateVector::xyz(0.05, 3.0, 3.0);
        let b = StateVector::xyz(TAU - 0.05, 3.0, 3.0);
        assert_abs_diff_eq!(abc.distance(&a, &b), 0.1, epsilon = 1e-12);
    }
}
