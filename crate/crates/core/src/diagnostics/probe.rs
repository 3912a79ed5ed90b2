//! Finite-difference estimates of the one-step constants `K_f`, `K_R`, `K_P`
//! and of how truncated returns (scalar and in distribution) respond to a
//! perturbation of the initial state.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quantile_sorted;
use super::w1::w1_empirical;
use crate::agents::ActionValues;
use crate::dynamics::FlowSystem;
use crate::envs::{Action, EnvSpec, Policy, System};
use crate::harness::csvfmt::fmt_f64;
use crate::{invalid, Error, Result, RngStream, StateVector};

/// A closed-loop system: state sampling, a (possibly random) policy acting on
/// observations, noise-free dynamics and reward.
pub trait ClosedLoop: Sync {
    fn dim(&self) -> usize;
    fn sample_initial(&self, stream: &mut RngStream) -> StateVector;
    fn distance(&self, a: &StateVector, b: &StateVector) -> f64;
    /// `s` moved by exactly `delta` in the metric of [`distance`].
    ///
    /// [`distance`]: ClosedLoop::distance
    fn perturb(&self, s: &StateVector, delta: f64, stream: &mut RngStream) -> StateVector;
    /// Observe `s` at time `t` and pick an action. All randomness (observation
    /// noise, policy sampling) comes from `stream`.
    fn act(&self, s: &StateVector, t: f64, stream: &mut RngStream) -> Action;
    fn advance(&self, s: &StateVector, action: &Action, t: f64) -> Result<StateVector>;
    fn reward(&self, s_next: &StateVector) -> f64;
    fn tick(&self) -> f64;
}

/// An environment spec driven by a policy.
pub struct EnvLoop<'a, P> {
    pub spec: &'a EnvSpec,
    pub policy: P,
}

impl<'a, P: Policy + Sync> EnvLoop<'a, P> {
    pub fn new(spec: &'a EnvSpec, policy: P) -> Self {
        Self { spec, policy }
    }
}

impl<P: Policy + Sync> ClosedLoop for EnvLoop<'_, P> {
    fn dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn sample_initial(&self, stream: &mut RngStream) -> StateVector {
        self.spec.sample_initial(stream)
    }

    fn distance(&self, a: &StateVector, b: &StateVector) -> f64 {
        self.spec.distance(a, b)
    }

    fn perturb(&self, s: &StateVector, delta: f64, stream: &mut RngStream) -> StateVector {
        let dim = s.dim();
        // Along +x for scalar states, a uniformly random direction otherwise.
        let dir = if dim == 1 {
            StateVector::x(1.0)
        } else {
            loop {
                let mut v = StateVector::zeros(dim);
                v.as_mut_slice().iter_mut().for_each(|c| *c = stream.normal());
                let n = v.norm();
                if n > 1e-12 {
                    break v.scale(1.0 / n);
                }
            }
        };
        let up = self.spec.project(*s + dir.scale(delta));
        if self.spec.in_domain(&up) && (self.spec.distance(s, &up) - delta).abs() <= 1e-6 * delta {
            up
        } else {
            // Clamped boundary: go the other way.
            self.spec.project(*s - dir.scale(delta))
        }
    }

    fn act(&self, s: &StateVector, t: f64, stream: &mut RngStream) -> Action {
        let obs = self.spec.observe(s, t, stream);
        self.policy.act(&obs, stream)
    }

    fn advance(&self, s: &StateVector, action: &Action, t: f64) -> Result<StateVector> {
        let next = crate::envs::dynamics_step(self.spec, s, action, t)?;
        if !self.spec.in_domain(&next) {
            return Err(Error::Divergence(format!("left the domain at {next:?}")));
        }
        Ok(next)
    }

    fn reward(&self, s_next: &StateVector) -> f64 {
        self.spec.reward_at(s_next)
    }

    fn tick(&self) -> f64 {
        self.spec.tick()
    }
}

/// Myopic action values `Q(o, a) = R(f(o, a))`: the reward of stepping the
/// noise-free dynamics from the observed state. Lipschitz in the observation,
/// so a softmax over it is a Lipschitz policy.
#[derive(Clone, Debug)]
pub struct OneStepLookahead {
    pub spec: EnvSpec,
}

impl OneStepLookahead {
    pub fn new(spec: EnvSpec) -> Self {
        Self { spec }
    }
}

impl ActionValues for OneStepLookahead {
    fn action_values(&self, obs: &[f64]) -> Vec<f64> {
        let dim = self.spec.state_dim();
        let s = self.spec.project(StateVector::new(&obs[..dim]));
        let t = match (self.spec.system, obs.get(dim)) {
            (System::Flow(FlowSystem::DoubleGyre { omega, .. }), Some(&phase)) => phase / omega,
            _ => 0.0,
        };
        (0..self.spec.n_actions())
            .map(|a| match crate::envs::dynamics_step(&self.spec, &s, &Action::Discrete(a), t) {
                Ok(next) if self.spec.in_domain(&next) => self.spec.reward_at(&next),
                _ => -1.0,
            })
            .collect()
    }
}

/// Softmax temperature used by the probes when they need a Lipschitz policy.
pub const PROBE_TEMPERATURE: f64 = 0.1;

/// Finite-difference settings shared by the probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub delta: f64,
    /// Pairs `(s, s + δ)` for the one-step constants.
    pub pairs: usize,
    /// Next-state draws per pair member for `K_P`.
    pub noise_samples: usize,
    /// Base states are reached by running the closed loop for a uniform
    /// number of steps in `0..=rollin_steps` from the initial distribution.
    pub rollin_steps: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            pairs: 1000,
            noise_samples: 64,
            rollin_steps: 0,
        }
    }
}

impl ProbeSettings {
    /// Defaults with δ = 1e-6 for maps and 1e-5 for flows.
    pub fn for_spec(spec: &EnvSpec) -> Self {
        Self {
            delta: if spec.is_map() { 1e-6 } else { 1e-5 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1e-8..=1e-4).contains(&self.delta) {
            return Err(invalid(format!("delta {} outside [1e-8, 1e-4]", self.delta)));
        }
        if self.pairs < 1000 {
            return Err(invalid("at least 1000 probe pairs are required"));
        }
        if self.noise_samples == 0 {
            return Err(invalid("noise_samples must be at least 1"));
        }
        Ok(())
    }
}

/// Estimated one-step Lipschitz constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    pub k_f_hat: f64,
    pub k_r_hat: f64,
    pub k_p_hat: f64,
    pub k_f_p99: f64,
    pub k_r_p99: f64,
    pub k_p_p99: f64,
    pub gamma: f64,
    pub pairs_sampled: usize,
    /// Pairs dropped because either member diverged.
    pub pairs_skipped: usize,
    pub perturbation_delta: f64,
}

impl LipschitzProbe {
    pub fn scalar_bound(&self, horizon: usize) -> f64 {
        scalar_return_bound(self.k_r_hat, self.gamma, self.k_f_hat, horizon)
    }

    pub fn w1_bound(&self) -> Result<f64> {
        distributional_bound(self.k_r_hat, self.gamma, self.k_p_hat)
    }
}

/// `K_R ((γK_f)^T - 1) / (γK_f - 1)`, i.e. `K_R Σ_{t<T} (γK_f)^t`.
pub fn scalar_return_bound(k_r: f64, gamma: f64, k_f: f64, horizon: usize) -> f64 {
    let g = gamma * k_f;
    if (g - 1.0).abs() < 1e-12 {
        k_r * horizon as f64
    } else {
        k_r * (g.powi(horizon as i32) - 1.0) / (g - 1.0)
    }
}

/// `K_R / (1 - γK_P)`; undefined unless `γK_P < 1`.
pub fn distributional_bound(k_r: f64, gamma: f64, k_p: f64) -> Result<f64> {
    let g = gamma * k_p;
    if g < 1.0 {
        Ok(k_r / (1.0 - g))
    } else {
        Err(Error::UndefinedBound(format!("gamma * K_P = {g} is not below 1")))
    }
}

/// Draw a base state, optionally after a random number of closed-loop steps.
/// Returns the state and its time.
fn sample_base<M: ClosedLoop + ?Sized>(
    model: &M,
    rollin: usize,
    stream: &mut RngStream,
) -> Option<(StateVector, f64)> {
    let mut s = model.sample_initial(stream);
    let mut t = 0.0;
    let k = if rollin == 0 { 0 } else { stream.below(rollin + 1) };
    for _ in 0..k {
        let a = model.act(&s, t, stream);
        s = model.advance(&s, &a, t).ok()?;
        t += model.tick();
    }
    Some((s, t))
}

/// One closed-loop step; `stream` is consumed in the same order for any
/// starting state, which is what makes paired draws common-random-number
/// couplings.
fn closed_step<M: ClosedLoop + ?Sized>(
    model: &M,
    s: &StateVector,
    t: f64,
    stream: &mut RngStream,
) -> Result<(StateVector, f64, Action)> {
    let a = model.act(s, t, stream);
    let next = model.advance(s, &a, t)?;
    let r = model.reward(&next);
    Ok((next, r, a))
}

struct PairRatios {
    k_f: f64,
    k_r: f64,
    k_p: f64,
}

fn probe_pair<M: ClosedLoop + ?Sized>(
    model: &M,
    settings: &ProbeSettings,
    mut stream: RngStream,
) -> Option<PairRatios> {
    let (s1, t) = sample_base(model, settings.rollin_steps, &mut stream)?;
    let s2 = model.perturb(&s1, settings.delta, &mut stream);
    let d0 = model.distance(&s1, &s2);
    if d0 == 0.0 {
        return None;
    }
    let crn = stream.fork();
    let (n1, r1, a1) = closed_step(model, &s1, t, &mut crn.clone()).ok()?;
    let (n2, _, _) = closed_step(model, &s2, t, &mut crn.clone()).ok()?;
    // Reward sensitivity is taken at a common action.
    let r2 = model.reward(&model.advance(&s2, &a1, t).ok()?);
    let k_f = model.distance(&n1, &n2) / d0;
    let k_r = (r1 - r2).abs() / d0;

    let mut x1 = Vec::with_capacity(settings.noise_samples);
    let mut x2 = Vec::with_capacity(settings.noise_samples);
    let mut coupled = 0.0;
    for _ in 0..settings.noise_samples {
        let draw = stream.fork();
        let (a, _, _) = closed_step(model, &s1, t, &mut draw.clone()).ok()?;
        let (b, _, _) = closed_step(model, &s2, t, &mut draw.clone()).ok()?;
        coupled += model.distance(&a, &b);
        if a.dim() == 1 {
            x1.push(a[0]);
            x2.push(b[0]);
        }
    }
    let w1 = if model.dim() == 1 {
        x1.sort_by(f64::total_cmp);
        x2.sort_by(f64::total_cmp);
        w1_empirical(&x1, &x2).ok()?
    } else {
        // Transport cost of the common-noise coupling: an upper bound on W1.
        coupled / settings.noise_samples as f64
    };
    Some(PairRatios {
        k_f,
        k_r,
        k_p: w1 / d0,
    })
}

/// Estimate `K_f`, `K_R` and `K_P` as maxima of finite-difference ratios
/// over sampled pairs `(s, s + δ)`.
///
/// `K_f` and `K_P` use the closed loop: both members of a pair share
/// observation noise and policy randomness. `K_R` compares rewards under the
/// same action. `K_P` is the W1 distance between `noise_samples` next-state
/// draws from each member (scalar states), or the coupling cost of those
/// draws in higher dimension. Pairs where either member diverges are skipped.
pub fn estimate_onestep_constants<M: ClosedLoop + ?Sized>(
    model: &M,
    gamma: f64,
    settings: &ProbeSettings,
    stream: &mut RngStream,
) -> Result<LipschitzProbe> {
    settings.validate()?;
    let base = stream.fork();
    let results: Vec<Option<PairRatios>> = (0..settings.pairs)
        .into_par_iter()
        .map(|i| probe_pair(model, settings, base.split(i as u64)))
        .collect();
    let ok: Vec<&PairRatios> = results.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Divergence("every probe pair diverged".into()));
    }
    let stat = |f: fn(&PairRatios) -> f64| {
        let mut v: Vec<f64> = ok.iter().map(|p| f(p)).collect();
        v.sort_by(f64::total_cmp);
        (*v.last().unwrap(), quantile_sorted(&v, 0.99))
    };
    let (k_f_hat, k_f_p99) = stat(|p| p.k_f);
    let (k_r_hat, k_r_p99) = stat(|p| p.k_r);
    let (k_p_hat, k_p_p99) = stat(|p| p.k_p);
    Ok(LipschitzProbe {
        k_f_hat,
        k_r_hat,
        k_p_hat,
        k_f_p99,
        k_r_p99,
        k_p_p99,
        gamma,
        pairs_sampled: settings.pairs,
        pairs_skipped: settings.pairs - ok.len(),
        perturbation_delta: settings.delta,
    })
}

/// Settings for [`return_lipschitz_curve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSettings {
    pub horizons: Vec<usize>,
    pub delta: f64,
    pub anchors: usize,
    /// Return samples per anchor.
    pub mc_samples: usize,
    pub rollin_steps: usize,
}

impl Default for CurveSettings {
    fn default() -> Self {
        Self {
            horizons: (1..=15).collect(),
            delta: 1e-6,
            anchors: 64,
            mc_samples: 256,
            rollin_steps: 0,
        }
    }
}

impl CurveSettings {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("horizons must be non-empty and strictly ascending"));
        }
        if self.horizons[0] == 0 {
            return Err(invalid("horizons start at 1"));
        }
        if !(1e-8..=1e-4).contains(&self.delta) {
            return Err(invalid(format!("delta {} outside [1e-8, 1e-4]", self.delta)));
        }
        if self.anchors == 0 || self.mc_samples == 0 {
            return Err(invalid("anchors and mc_samples must be positive"));
        }
        Ok(())
    }
}

/// Empirical return sensitivities per horizon, with the evaluated bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnLipCurve {
    pub horizons: Vec<usize>,
    /// Mean over anchors and coupled rollouts of `|G_T(s) - G_T(s+δ)| / δ`.
    pub scalar_ratio: Vec<f64>,
    /// Mean over anchors of `W1(G_T(s), G_T(s+δ)) / δ`.
    pub w1_ratio: Vec<f64>,
    pub bound_scalar: Vec<f64>,
    /// `None` when `γK_P ≥ 1`.
    pub bound_w1: Option<f64>,
    pub anchors_used: usize,
    pub anchors_skipped: usize,
}

pub const LIPCURVE_HEADER: &str = "T,scalar_ratio,w1_ratio,bound_scalar,bound_w1";

impl ReturnLipCurve {
    pub fn ratio_at(&self, horizon: usize) -> Option<(f64, f64)> {
        let i = self.horizons.iter().position(|&h| h == horizon)?;
        Some((self.scalar_ratio[i], self.w1_ratio[i]))
    }

    /// `bound_w1` is written as `undefined` when the bound does not exist.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(LIPCURVE_HEADER.split(','))?;
        let bw = self.bound_w1.map(fmt_f64).unwrap_or_else(|| "undefined".into());
        for i in 0..self.horizons.len() {
            w.write_record([
                self.horizons[i].to_string(),
                fmt_f64(self.scalar_ratio[i]),
                fmt_f64(self.w1_ratio[i]),
                fmt_f64(self.bound_scalar[i]),
                bw.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Discounted partial sums `G_T` for every requested horizon.
fn returns_at<M: ClosedLoop + ?Sized>(
    model: &M,
    s0: &StateVector,
    t0: f64,
    gamma: f64,
    horizons: &[usize],
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(horizons.len());
    let (mut s, mut t, mut g, mut disc) = (*s0, t0, 0.0, 1.0);
    let mut next_h = 0;
    for step in 1..=*horizons.last().unwrap() {
        let (n, r, _) = closed_step(model, &s, t, stream)?;
        g += disc * r;
        disc *= gamma;
        s = n;
        t += model.tick();
        if horizons[next_h] == step {
            out.push(g);
            next_h += 1;
        }
    }
    Ok(out)
}

/// Per-anchor (scalar, w1) ratios for each horizon.
fn anchor_ratios<M: ClosedLoop + ?Sized>(
    model: &M,
    gamma: f64,
    settings: &CurveSettings,
    mut stream: RngStream,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let (s1, t) = sample_base(model, settings.rollin_steps, &mut stream)?;
    let s2 = model.perturb(&s1, settings.delta, &mut stream);
    let d0 = model.distance(&s1, &s2);
    if d0 == 0.0 {
        return None;
    }
    let nh = settings.horizons.len();
    let m = settings.mc_samples;
    let mut g1 = vec![Vec::with_capacity(m); nh];
    let mut g2 = vec![Vec::with_capacity(m); nh];
    let mut coupled = vec![0.0; nh];
    for _ in 0..m {
        let draw = stream.fork();
        let a = returns_at(model, &s1, t, gamma, &settings.horizons, &mut draw.clone()).ok()?;
        let b = returns_at(model, &s2, t, gamma, &settings.horizons, &mut draw.clone()).ok()?;
        for h in 0..nh {
            coupled[h] += (a[h] - b[h]).abs();
            g1[h].push(a[h]);
            g2[h].push(b[h]);
        }
    }
    let scalar = coupled.iter().map(|c| c / m as f64 / d0).collect();
    let mut w1 = Vec::with_capacity(nh);
    for h in 0..nh {
        g1[h].sort_by(f64::total_cmp);
        g2[h].sort_by(f64::total_cmp);
        w1.push(w1_empirical(&g1[h], &g2[h]).ok()? / d0);
    }
    Some((scalar, w1))
}

/// Sensitivity of truncated returns to a `δ` perturbation of the start state.
///
/// Each anchor `s` is paired with `s + δ` and `mc_samples` rollouts are run
/// from both members with common random numbers. The scalar ratio averages the
/// coupled return differences (the Lipschitz ratio of `G_T` along each noise
/// realisation); the W1 ratio compares the two sets of return samples as
/// distributions, so it never exceeds the scalar ratio. Anchors whose rollouts
/// diverge are skipped.
pub fn return_lipschitz_curve<M: ClosedLoop + ?Sized>(
    model: &M,
    gamma: f64,
    probe: &LipschitzProbe,
    settings: &CurveSettings,
    stream: &mut RngStream,
) -> Result<ReturnLipCurve> {
    settings.validate()?;
    let base = stream.fork();
    let per_anchor: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..settings.anchors)
        .into_par_iter()
        .map(|i| anchor_ratios(model, gamma, settings, base.split(i as u64)))
        .collect();
    let ok: Vec<&(Vec<f64>, Vec<f64>)> = per_anchor.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Divergence("every anchor diverged".into()));
    }
    let nh = settings.horizons.len();
    let mean = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
        (0..nh)
            .map(|h| ok.iter().map(|a| pick(a)[h]).sum::<f64>() / ok.len() as f64)
            .collect()
    };
    Ok(ReturnLipCurve {
        horizons: settings.horizons.clone(),
        scalar_ratio: mean(|a| &a.0),
        w1_ratio: mean(|a| &a.1),
        bound_scalar: settings.horizons.iter().map(|&h| probe.scalar_bound(h)).collect(),
        bound_w1: probe.w1_bound().ok(),
        anchors_used: ok.len(),
        anchors_skipped: settings.anchors - ok.len(),
    })
}
