use std::io::Write;

use serde::{Deserialize, Serialize};

use super::spec::{ActionSet, EnvSpec, System};
use crate::dynamics::{integrate_rk4, VectorField};
use crate::harness::csvfmt::fmt_f64;
use crate::{invalid, Error, Result, RngStream, StateVector};

/// An action as submitted to the environment.
///
/// Continuous actions are in normalised units: each coordinate is clipped to
/// `[-1, 1]`; maps scale the result by the action bound, flows additionally
/// project the thrust onto the unit ball before scaling by the swim speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Discrete(usize),
    Continuous(StateVector),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: StateVector,
    pub action: Action,
    pub r: f64,
    pub s_next: StateVector,
    /// Agent observation of `s_next` (noisy, with phase if applicable).
    pub obs_next: Vec<f64>,
    /// Goal reached / system stabilised.
    pub done: bool,
    /// Step limit hit or dynamics diverged.
    pub truncated: bool,
    /// The dynamics left their domain; `r` carries the -1 penalty.
    pub diverged: bool,
}

impl Transition {
    pub fn a_index(&self) -> Option<usize> {
        self.action.index()
    }

    pub fn ends_episode(&self) -> bool {
        self.done || self.truncated
    }
}

/// Draw an initial state.
pub fn reset(spec: &EnvSpec, stream: &mut RngStream) -> StateVector {
    spec.sample_initial(stream)
}

/// Parameter perturbation or thrust vector actually applied for `action`.
fn resolve(spec: &EnvSpec, action: &Action) -> Result<Resolved> {
    match (action, &spec.actions) {
        (Action::Discrete(i), ActionSet::Controls(c)) => c
            .get(*i)
            .map(|&a| Resolved::Control(a))
            .ok_or_else(|| invalid(format!("action index {i} out of range 0..{}", c.len()))),
        (Action::Discrete(i), ActionSet::Thrusts(t)) => t
            .get(*i)
            .map(|&v| Resolved::Thrust(v))
            .ok_or_else(|| invalid(format!("action index {i} out of range 0..{}", t.len()))),
        (Action::Continuous(u), _) => {
            if u.dim() != spec.action_dim() {
                return Err(Error::LengthMismatch {
                    context: "continuous action",
                    expected: spec.action_dim(),
                    got: u.dim(),
                });
            }
            let clipped = u.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) });
            match spec.system {
                System::Map(_) => Ok(Resolved::Control(spec.action_bound * clipped[0])),
                System::Flow(_) => {
                    let n = clipped.norm();
                    let unit = if n > 1.0 { clipped.scale(1.0 / n) } else { clipped };
                    Ok(Resolved::Thrust(unit.scale(spec.action_bound)))
                }
            }
        }
    }
}

enum Resolved {
    Control(f64),
    Thrust(StateVector),
}

/// Advance the true state one tick; `t` is the physical time at `s`.
fn advance(spec: &EnvSpec, s: &StateVector, action: &Action, t: f64) -> Result<StateVector> {
    match (spec.system, resolve(spec, action)?) {
        (System::Map(m), Resolved::Control(a)) => m.step(s, a),
        (System::Flow(f), Resolved::Thrust(v)) => {
            let drifted = integrate_rk4(&f, s, t, spec.dt, spec.substeps)?;
            let next = f.project(drifted + v.scale(spec.dt));
            if !next.is_finite() {
                return Err(Error::Divergence(format!("swimmer state {next:?}")));
            }
            Ok(next)
        }
        _ => Err(invalid("action kind does not match the system")),
    }
}

/// Noise-free one-step dynamics `f(s, a)`, exposed for the Lipschitz probes.
pub(crate) fn dynamics_step(
    spec: &EnvSpec,
    s: &StateVector,
    action: &Action,
    t: f64,
) -> Result<StateVector> {
    advance(spec, s, action, t)
}

/// One environment tick.
///
/// Divergence of the dynamics is not an error here: the transition comes back
/// with `diverged = truncated = true`, reward -1 and `s_next = s`. Invalid
/// actions are errors.
pub fn env_step(
    spec: &EnvSpec,
    s: &StateVector,
    action: &Action,
    t: f64,
    stream: &mut RngStream,
) -> Result<Transition> {
    let t_next = t + spec.tick();
    match advance(spec, s, action, t) {
        Ok(s_next) => {
            let r = spec.reward_at(&s_next);
            let done = spec.is_goal(&s_next);
            let obs_next = spec.observe(&s_next, t_next, stream);
            Ok(Transition {
                s: *s,
                action: *action,
                r,
                s_next,
                obs_next,
                done,
                truncated: false,
                diverged: false,
            })
        }
        Err(Error::Divergence(_)) => Ok(Transition {
            s: *s,
            action: *action,
            r: -1.0,
            s_next: *s,
            obs_next: spec.observe(s, t_next, stream),
            done: false,
            truncated: true,
            diverged: true,
        }),
        Err(e) => Err(e),
    }
}

/// Chooses actions from observations.
pub trait Policy {
    fn act(&self, obs: &[f64], stream: &mut RngStream) -> Action;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, obs: &[f64], stream: &mut RngStream) -> Action {
        (**self).act(obs, stream)
    }
}

/// Uniform over the discrete action set.
#[derive(Clone, Copy, Debug)]
pub struct RandomPolicy {
    pub n_actions: usize,
}

impl Policy for RandomPolicy {
    fn act(&self, _obs: &[f64], stream: &mut RngStream) -> Action {
        Action::Discrete(stream.below(self.n_actions))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConstantPolicy(pub Action);

impl Policy for ConstantPolicy {
    fn act(&self, _obs: &[f64], _stream: &mut RngStream) -> Action {
        self.0
    }
}

pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&[f64], &mut RngStream) -> Action,
{
    fn act(&self, obs: &[f64], stream: &mut RngStream) -> Action {
        (self.0)(obs, stream)
    }
}

/// A running episode: true state, clock and the agent's current observation.
#[derive(Clone, Debug)]
pub struct EnvInstance {
    pub spec: EnvSpec,
    pub state: StateVector,
    pub obs: Vec<f64>,
    pub t: f64,
    pub steps: usize,
}

impl EnvInstance {
    pub fn new(spec: EnvSpec, stream: &mut RngStream) -> Self {
        let state = reset(&spec, stream);
        Self::from_state(spec, state, stream)
    }

    /// Start an episode from a chosen state at time zero.
    pub fn from_state(spec: EnvSpec, state: StateVector, stream: &mut RngStream) -> Self {
        let obs = spec.observe(&state, 0.0, stream);
        Self {
            spec,
            state,
            obs,
            t: 0.0,
            steps: 0,
        }
    }

    pub fn reset(&mut self, stream: &mut RngStream) {
        self.state = reset(&self.spec, stream);
        self.t = 0.0;
        self.steps = 0;
        self.obs = self.spec.observe(&self.state, 0.0, stream);
    }

    /// Step and mark truncation at the step limit. Does not auto-reset.
    pub fn step(&mut self, action: &Action, stream: &mut RngStream) -> Result<Transition> {
        let mut tr = env_step(&self.spec, &self.state, action, self.t, stream)?;
        self.steps += 1;
        self.t += self.spec.tick();
        if self.steps >= self.spec.max_steps && !tr.done {
            tr.truncated = true;
        }
        self.state = tr.s_next;
        self.obs = tr.obs_next.clone();
        Ok(tr)
    }
}

/// A complete episode with both return accountings.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub transitions: Vec<Transition>,
    pub return_undiscounted: f64,
    pub return_discounted: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn final_state(&self) -> Option<StateVector> {
        self.transitions.last().map(|t| t.s_next)
    }

    pub fn diverged(&self) -> bool {
        self.transitions.iter().any(|t| t.diverged)
    }

    /// CSV with header `t,s0[,s1[,s2]],a,r,done`; `s*` is the state before
    /// the step. Continuous actions are written as space-separated components.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.transitions.first().map_or(1, |t| t.s.dim());
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|d| format!("s{d}")));
        header.extend(["a", "r", "done"].map(String::from));
        w.write_record(&header)?;
        for (t, tr) in self.transitions.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(tr.s.as_slice().iter().map(|&v| fmt_f64(v)));
            row.push(match tr.action {
                Action::Discrete(i) => i.to_string(),
                Action::Continuous(u) => u
                    .as_slice()
                    .iter()
                    .map(|&v| fmt_f64(v))
                    .collect::<Vec<_>>()
                    .join(" "),
            });
            row.push(fmt_f64(tr.r));
            row.push(u8::from(tr.done).to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run one episode under `policy`. The environment and the policy draw from
/// separate sub-streams of `seed`.
pub fn rollout<P: Policy + ?Sized>(
    spec: &EnvSpec,
    policy: &P,
    gamma: f64,
    seed: u64,
) -> Result<EpisodeLog> {
    let mut env_stream = RngStream::derive(seed, 0);
    let mut policy_stream = RngStream::derive(seed, 1);
    let env = EnvInstance::new(spec.clone(), &mut env_stream);
    rollout_from(env, policy, gamma, seed, &mut env_stream, &mut policy_stream)
}

pub(crate) fn rollout_from<P: Policy + ?Sized>(
    mut env: EnvInstance,
    policy: &P,
    gamma: f64,
    seed: u64,
    env_stream: &mut RngStream,
    policy_stream: &mut RngStream,
) -> Result<EpisodeLog> {
    let mut transitions = Vec::new();
    let mut ret = 0.0;
    let mut disc = 0.0;
    let mut g = 1.0;
    loop {
        let action = policy.act(&env.obs, policy_stream);
        let tr = env.step(&action, env_stream)?;
        ret += tr.r;
        disc += g * tr.r;
        g *= gamma;
        let end = tr.ends_episode();
        transitions.push(tr);
        if end {
            break;
        }
    }
    Ok(EpisodeLog {
        transitions,
        return_undiscounted: ret,
        return_discounted: disc,
        gamma,
        seed,
    })
}
