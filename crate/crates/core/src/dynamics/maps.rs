use serde::{Deserialize, Serialize};

use crate::{Error, Result, StateVector};

/// Controlled discrete-time maps. The control perturbs the chaotic
/// parameter: `m` for the logistic map, `u` for the Ikeda map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapSystem {
    Logistic { m: f64 },
    Ikeda { u: f64, k: f64, p: f64 },
}

impl MapSystem {
    pub fn logistic(m: f64) -> Self {
        MapSystem::Logistic { m }
    }

    pub fn ikeda(u: f64, k: f64, p: f64) -> Self {
        MapSystem::Ikeda { u, k, p }
    }

    /// Ikeda map in its usual chaotic regime (u = 0.9, k = 0.4, p = 6).
    pub fn ikeda_default() -> Self {
        Self::ikeda(0.9, 0.4, 6.0)
    }

    pub fn dim(&self) -> usize {
        match self {
            MapSystem::Logistic { .. } => 1,
            MapSystem::Ikeda { .. } => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapSystem::Logistic { .. } => "logistic",
            MapSystem::Ikeda { .. } => "ikeda",
        }
    }

    pub fn in_domain(&self, s: &StateVector) -> bool {
        if s.dim() != self.dim() || !s.is_finite() {
            return false;
        }
        match self {
            MapSystem::Logistic { .. } => (0.0..=1.0).contains(&s[0]),
            MapSystem::Ikeda { .. } => true,
        }
    }

    /// One application of the map with the given parameter perturbation.
    pub fn step(&self, s: &StateVector, control: f64) -> Result<StateVector> {
        if s.dim() != self.dim() {
            return Err(Error::LengthMismatch {
                context: "step_map state",
                expected: self.dim(),
                got: s.dim(),
            });
        }
        if !control.is_finite() {
            return Err(Error::NonFinite("step_map control"));
        }
        let next = match *self {
            MapSystem::Logistic { m } => {
                let x = s[0];
                StateVector::x((m + control) * x * (1.0 - x))
            }
            MapSystem::Ikeda { u, k, p } => {
                let (x, y) = (s[0], s[1]);
                let xi = k - p / (1.0 + x * x + y * y);
                let (sin, cos) = xi.sin_cos();
                let gain = u + control;
                StateVector::xy(
                    1.0 + gain * (x * cos - y * sin),
                    gain * (x * sin + y * cos),
                )
            }
        };
        if !self.in_domain(&next) {
            return Err(Error::Divergence(format!(
                "{} map left its domain: {:?} -> {:?}",
                self.name(),
                s,
                next
            )));
        }
        Ok(next)
    }

    /// Period-1 fixed point of the uncontrolled map.
    ///
    /// Logistic: the closed form `(m - 1) / m`. Ikeda: Newton refinement
    /// started from (0.533, 0.247); see [`MapSystem::fixed_point_residual`].
    pub fn fixed_point(&self) -> Result<StateVector> {
        match *self {
            MapSystem::Logistic { m } => Ok(StateVector::x((m - 1.0) / m)),
            MapSystem::Ikeda { .. } => self.newton_fixed_point(StateVector::xy(0.533, 0.247)),
        }
    }

    /// `‖f(s*) - s*‖` at the refined fixed point.
    pub fn fixed_point_residual(&self) -> Result<f64> {
        let fp = self.fixed_point()?;
        Ok((self.step(&fp, 0.0)? - fp).norm())
    }

    fn newton_fixed_point(&self, start: StateVector) -> Result<StateVector> {
        let mut s = start;
        let h = 1e-7;
        for _ in 0..50 {
            let g = self.step(&s, 0.0)? - s;
            if g.norm() < 1e-15 {
                break;
            }
            // Jacobian of g = f - id by central differences.
            let mut jac = [[0.0; 2]; 2];
            for col in 0..2 {
                let mut plus = s;
                let mut minus = s;
                plus[col] += h;
                minus[col] -= h;
                let d = (self.step(&plus, 0.0)? - plus) - (self.step(&minus, 0.0)? - minus);
                jac[0][col] = d[0] / (2.0 * h);
                jac[1][col] = d[1] / (2.0 * h);
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < 1e-14 {
                return Err(Error::Divergence("singular Jacobian in fixed-point search".into()));
            }
            let dx = (jac[1][1] * g[0] - jac[0][1] * g[1]) / det;
            let dy = (-jac[1][0] * g[0] + jac[0][0] * g[1]) / det;
            s = StateVector::xy(s[0] - dx, s[1] - dy);
        }
        Ok(s)
    }
}

pub fn step_map(sys: &MapSystem, s: &StateVector, control: f64) -> Result<StateVector> {
    sys.step(s, control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logistic_fixed_point_maps_to_itself() {
        let sys = MapSystem::logistic(3.8);
        let fp = sys.fixed_point().unwrap();
        let next = sys.step(&fp, 0.0).unwrap();
        assert_abs_diff_eq!(next[0], fp[0], epsilon = 1e-12);
        assert_abs_diff_eq!(fp[0], 2.8 / 3.8, epsilon = 0.0);
    }

    #[test]
    fn logistic_half_goes_to_095() {
        let sys = MapSystem::logistic(3.8);
        let next = sys.step(&StateVector::x(0.5), 0.0).unwrap();
        assert_abs_diff_eq!(next[0], 0.95, epsilon = 1e-15);
    }

    #[test]
    fn logistic_control_perturbs_parameter() {
        let sys = MapSystem::logistic(3.8);
        let next = sys.step(&StateVector::x(0.5), 0.1).unwrap();
        assert_abs_diff_eq!(next[0], 3.9 * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn ikeda_origin_goes_to_one_zero() {
        let sys = MapSystem::ikeda_default();
        let next = sys.step(&StateVector::xy(0.0, 0.0), 0.0).unwrap();
        assert_eq!(next.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn ikeda_fixed_point_refines_published_estimate() {
        let sys = MapSystem::ikeda_default();
        let fp = sys.fixed_point().unwrap();
        assert!((fp[0] - 0.533).abs() < 5e-3, "{fp:?}");
        assert!((fp[1] - 0.247).abs() < 5e-3, "{fp:?}");
        assert!(sys.fixed_point_residual().unwrap() < 1e-12);
    }

    #[test]
    fn logistic_escape_is_a_divergence_error() {
        let sys = MapSystem::logistic(4.5);
        let err = sys.step(&StateVector::x(0.5), 0.0).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let sys = MapSystem::ikeda_default();
        assert!(sys.step(&StateVector::x(0.1), 0.0).is_err());
    }
}
