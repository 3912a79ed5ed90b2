use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowSystem, MapSystem, VectorField};
use crate::{invalid, Error, Result, RngStream, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Map(MapSystem),
    Flow(FlowSystem),
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::Map(m) => m.dim(),
            System::Flow(f) => f.dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Map(m) => m.name(),
            System::Flow(f) => f.name(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `-‖s' - goal‖²`.
    NegSquaredDistance,
    /// `-0.01 + 10 exp(-d(s')² / 2ε²)`.
    GaussianPeak,
}

/// Discrete actions: parameter perturbations for maps, thrust velocities for
/// swimmers in flows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSet {
    Controls(Vec<f64>),
    Thrusts(Vec<StateVector>),
}

impl ActionSet {
    pub fn len(&self) -> usize {
        match self {
            ActionSet::Controls(c) => c.len(),
            ActionSet::Thrusts(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `n` evenly spaced controls in `[-bound, bound]`.
    pub fn even_controls(n: usize, bound: f64) -> Self {
        assert!(n >= 2, "need at least two controls");
        ActionSet::Controls(
            (0..n)
                .map(|i| -bound + 2.0 * bound * i as f64 / (n - 1) as f64)
                .collect(),
        )
    }

    /// `±speed` along each axis, followed by a zero-thrust "coast" action.
    pub fn axis_thrusts(dim: usize, speed: f64) -> Self {
        let mut out = Vec::with_capacity(2 * dim + 1);
        for d in 0..dim {
            for sign in [1.0, -1.0] {
                let mut v = StateVector::zeros(dim);
                v[d] = sign * speed;
                out.push(v);
            }
        }
        out.push(StateVector::zeros(dim));
        ActionSet::Thrusts(out)
    }
}

/// The four benchmark tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Logistic,
    Ikeda,
    DoubleGyre,
    Abc,
}

impl EnvName {
    pub fn spec(self) -> EnvSpec {
        match self {
            EnvName::Logistic => EnvSpec::logistic(3.8),
            EnvName::Ikeda => EnvSpec::ikeda(),
            EnvName::DoubleGyre => EnvSpec::double_gyre(),
            EnvName::Abc => EnvSpec::abc(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Logistic => "logistic",
            EnvName::Ikeda => "ikeda",
            EnvName::DoubleGyre => "double_gyre",
            EnvName::Abc => "abc",
        }
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(EnvName::Logistic),
            "ikeda" => Ok(EnvName::Ikeda),
            "double_gyre" | "double-gyre" => Ok(EnvName::DoubleGyre),
            "abc" => Ok(EnvName::Abc),
            other => Err(invalid(format!("unknown environment `{other}`"))),
        }
    }
}

/// Full description of an episodic task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub system: System,
    pub actions: ActionSet,
    /// Largest control magnitude for maps; swimmer speed for flows.
    pub action_bound: f64,
    pub max_steps: usize,
    pub goal: StateVector,
    /// Stabilisation tolerance for maps, goal radius ε for flows.
    pub goal_tol: f64,
    pub obs_noise_sigma: f64,
    pub reward_kind: RewardKind,
    /// Integration step per environment tick (flows only).
    pub dt: f64,
    pub substeps: usize,
}

impl EnvSpec {
    pub fn logistic(m: f64) -> Self {
        let system = MapSystem::logistic(m);
        Self::map_task(system, system.fixed_point().expect("closed form"))
    }

    /// Ikeda task; the goal is the Newton-refined period-1 fixed point.
    pub fn ikeda() -> Self {
        let system = MapSystem::ikeda_default();
        let goal = system
            .fixed_point()
            .expect("Ikeda fixed point converges from the tabulated estimate");
        Self::map_task(system, goal)
    }

    fn map_task(system: MapSystem, goal: StateVector) -> Self {
        Self {
            system: System::Map(system),
            actions: ActionSet::even_controls(11, 0.1),
            action_bound: 0.1,
            max_steps: 200,
            goal,
            goal_tol: 1e-3,
            obs_noise_sigma: 0.0,
            reward_kind: RewardKind::NegSquaredDistance,
            dt: 1.0,
            substeps: 1,
        }
    }

    pub fn double_gyre() -> Self {
        Self::flow_task(FlowSystem::double_gyre_default(), StateVector::xy(1.8, 0.8))
    }

    pub fn abc() -> Self {
        Self::flow_task(
            FlowSystem::abc_default(),
            StateVector::xyz(FRAC_PI_2, FRAC_PI_2, FRAC_PI_2),
        )
    }

    /// Swimmer task with thrust speed half the flow's maximum speed.
    pub fn flow_task(system: FlowSystem, goal: StateVector) -> Self {
        let speed = 0.5 * system.max_speed();
        Self {
            system: System::Flow(system),
            actions: ActionSet::axis_thrusts(system.dim(), speed),
            action_bound: speed,
            max_steps: 500,
            goal,
            goal_tol: 0.1,
            obs_noise_sigma: 0.0,
            reward_kind: RewardKind::GaussianPeak,
            dt: 0.01,
            substeps: 1,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.obs_noise_sigma = sigma;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.system.dim()
    }

    /// Dimension of continuous actions (one control for maps, a thrust
    /// vector for flows).
    pub fn action_dim(&self) -> usize {
        match self.system {
            System::Map(_) => 1,
            System::Flow(f) => f.dim(),
        }
    }

    /// Whether the observation carries the forcing phase `ωt mod 2π`.
    pub fn observes_phase(&self) -> bool {
        matches!(self.system, System::Flow(f) if f.is_time_dependent())
    }

    pub fn obs_dim(&self) -> usize {
        self.state_dim() + usize::from(self.observes_phase())
    }

    pub fn is_map(&self) -> bool {
        matches!(self.system, System::Map(_))
    }

    pub fn name(&self) -> &'static str {
        self.system.name()
    }

    /// Euclidean distance, using the minimum image on the torus.
    pub fn distance(&self, a: &StateVector, b: &StateVector) -> f64 {
        match self.system {
            System::Flow(f) => f.distance(a, b),
            System::Map(_) => (*a - *b).norm(),
        }
    }

    /// Distance from `s` to the goal.
    pub fn goal_distance(&self, s: &StateVector) -> f64 {
        self.distance(s, &self.goal)
    }

    /// Wrap or clamp a state back into the domain (identity for maps).
    pub fn project(&self, s: StateVector) -> StateVector {
        match self.system {
            System::Flow(f) => f.project(s),
            System::Map(_) => s,
        }
    }

    /// Reward for arriving in `s_next`.
    pub fn reward_at(&self, s_next: &StateVector) -> f64 {
        let d = self.goal_distance(s_next);
        match self.reward_kind {
            RewardKind::NegSquaredDistance => -d * d,
            RewardKind::GaussianPeak => {
                let eps = self.goal_tol;
                -0.01 + 10.0 * (-d * d / (2.0 * eps * eps)).exp()
            }
        }
    }

    /// Analytic Lipschitz constant of the Gaussian-peak reward, `10 e^{-1/2} / ε`.
    pub fn gaussian_peak_lipschitz(&self) -> f64 {
        10.0 * (-0.5f64).exp() / self.goal_tol
    }

    pub fn is_goal(&self, s_next: &StateVector) -> bool {
        self.goal_distance(s_next) < self.goal_tol
    }

    pub fn in_domain(&self, s: &StateVector) -> bool {
        match self.system {
            System::Map(m) => m.in_domain(s),
            System::Flow(f) => f.in_domain(s),
        }
    }

    /// Forcing phase at time `t`, if observed.
    pub fn phase(&self, t: f64) -> Option<f64> {
        match self.system {
            System::Flow(FlowSystem::DoubleGyre { omega, .. }) if self.observes_phase() => {
                Some((omega * t).rem_euclid(TAU))
            }
            _ => None,
        }
    }

    /// Agent view of `s` at time `t`: the state plus Gaussian noise per
    /// coordinate, then the forcing phase when the flow is time dependent.
    pub fn observe(&self, s: &StateVector, t: f64, stream: &mut RngStream) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.obs_dim());
        for &v in s.as_slice() {
            let noise = if self.obs_noise_sigma > 0.0 {
                self.obs_noise_sigma * stream.normal()
            } else {
                0.0
            };
            obs.push(v + noise);
        }
        if let Some(phase) = self.phase(t) {
            obs.push(phase);
        }
        obs
    }

    /// Physical time elapsed per environment step.
    pub fn tick(&self) -> f64 {
        match self.system {
            System::Map(_) => 1.0,
            System::Flow(_) => self.dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions.is_empty() {
            return Err(invalid("action set is empty"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be at least 1"));
        }
        if !(self.obs_noise_sigma >= 0.0) {
            return Err(invalid("obs_noise_sigma must be non-negative"));
        }
        if !(self.goal_tol > 0.0) {
            return Err(invalid("goal tolerance must be positive"));
        }
        if self.goal.dim() != self.state_dim() {
            return Err(invalid("goal dimension does not match the system"));
        }
        if let System::Map(MapSystem::Logistic { m }) = self.system {
            if !(m > 0.0 && m <= 4.0) {
                return Err(invalid(format!("logistic m = {m} is outside (0, 4]")));
            }
        }
        match (&self.system, &self.actions) {
            (System::Map(_), ActionSet::Controls(c)) => {
                if let Some(a) = c.iter().find(|a| a.abs() > self.action_bound + 1e-12) {
                    return Err(invalid(format!(
                        "control {a} exceeds the action bound {}",
                        self.action_bound
                    )));
                }
            }
            (System::Flow(f), ActionSet::Thrusts(t)) => {
                if t.iter().any(|v| v.dim() != f.dim()) {
                    return Err(invalid("thrust dimension does not match the flow"));
                }
                if !(self.dt > 0.0) || self.substeps == 0 {
                    return Err(invalid("flow tasks need dt > 0 and substeps >= 1"));
                }
                let thrust = t.iter().map(|v| v.norm()).fold(0.0, f64::max).max(self.action_bound);
                let flow = f.max_speed();
                if thrust >= flow {
                    return Err(invalid(format!(
                        "swimmer is not under-actuated: thrust {thrust} >= flow speed {flow}"
                    )));
                }
            }
            _ => return Err(invalid("action set kind does not match the system")),
        }
        Ok(())
    }

    /// Initial-state distribution.
    ///
    /// Logistic: uniform on `[0.05, 0.95]`. Ikeda: uniform on the attractor
    /// box `[-0.5, 1.5] x [-1.5, 1.0]`. Flows: uniform on the domain with a
    /// ball of radius `2ε` around the goal removed.
    pub fn sample_initial(&self, stream: &mut RngStream) -> StateVector {
        match self.system {
            System::Map(MapSystem::Logistic { .. }) => StateVector::x(stream.uniform_in(0.05, 0.95)),
            System::Map(MapSystem::Ikeda { .. }) => {
                StateVector::xy(stream.uniform_in(-0.5, 1.5), stream.uniform_in(-1.5, 1.0))
            }
            System::Flow(f) => {
                let bounds = f.bounds();
                loop {
                    let mut s = StateVector::zeros(f.dim());
                    for (d, &(lo, hi)) in bounds.iter().enumerate() {
                        s[d] = stream.uniform_in(lo, hi);
                    }
                    let s = f.project(s);
                    if self.goal_distance(&s) >= 2.0 * self.goal_tol {
                        return s;
                    }
                }
            }
        }
    }
}
