//! Clipped-surrogate policy optimisation with a Gaussian actor and a shared
//! trunk. The network's output row is `[mean (d), log_std (d), value]`.

use std::f64::consts::{E, PI};

use super::PpoConfig;
use crate::nn::{adam_step, init_params, shapes_for, AdamState, GradReport, NetworkParams};
use crate::{Error, Result, RngStream};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicyOut {
    pub mean: Vec<f64>,
    /// Clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Vec<f64>,
    pub value: f64,
}

pub fn actor_critic_widths(obs_dim: usize, act_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![obs_dim];
    w.extend_from_slice(hidden);
    w.push(2 * act_dim + 1);
    w
}

/// He-uniform trunk; policy rows of the output layer shrunk by 100 so the
/// initial mean action is near zero, log-std biases set to `init_log_std`.
pub fn init_actor_critic(obs_dim: usize, act_dim: usize, cfg: &PpoConfig, stream: &mut RngStream) -> NetworkParams {
    let mut p = init_params(shapes_for(&actor_critic_widths(obs_dim, act_dim, &cfg.hidden)), stream);
    let last = p.n_layers() - 1;
    let h = p.layer_shapes[last].inputs;
    p.weights_mut(last)[..2 * act_dim * h].iter_mut().for_each(|w| *w *= 0.01);
    p.bias_mut(last)[act_dim..2 * act_dim].fill(cfg.init_log_std);
    p
}

pub fn split_output(out: &[f64], act_dim: usize) -> GaussianPolicyOut {
    assert_eq!(out.len(), 2 * act_dim + 1, "actor-critic output width");
    GaussianPolicyOut {
        mean: out[..act_dim].to_vec(),
        log_std: out[act_dim..2 * act_dim]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect(),
        value: out[2 * act_dim],
    }
}

/// Diagonal Gaussian log density.
pub fn gaussian_log_prob(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    a.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 * (2.0 * PI * E).ln() + ls).sum()
}

/// `mean(min(ρ A, clip(ρ, 1-ε, 1+ε) A))`.
pub fn clipped_surrogate(ratios: &[f64], adv: &[f64], clip: f64) -> f64 {
    let s: f64 = ratios
        .iter()
        .zip(adv)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a))
        .sum();
    s / ratios.len() as f64
}

/// One rollout segment per environment, stored env-major
/// (`index = env * len + t`).
#[derive(Clone, Debug, Default)]
pub struct Rollout {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub n_envs: usize,
    pub len: usize,
    pub obs: Vec<f64>,
    /// Pre-clip Gaussian samples.
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Terminal (goal or divergence): no bootstrap.
    pub dones: Vec<bool>,
    /// Episode ended here, by termination or step limit.
    pub ends: Vec<bool>,
    /// Value of the final observation where an episode was truncated.
    pub trunc_values: Vec<f64>,
    /// Value of the observation following each segment.
    pub last_values: Vec<f64>,
}

impl Rollout {
    pub fn new(obs_dim: usize, act_dim: usize, n_envs: usize, len: usize) -> Self {
        let n = n_envs * len;
        Self {
            obs_dim,
            act_dim,
            n_envs,
            len,
            obs: vec![0.0; n * obs_dim],
            actions: vec![0.0; n * act_dim],
            log_probs: vec![0.0; n],
            values: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            ends: vec![false; n],
            trunc_values: vec![0.0; n],
            last_values: vec![0.0; n_envs],
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_envs * self.len
    }

    /// GAE advantages and return targets for every sample.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let mut adv = Vec::with_capacity(self.n_samples());
        let mut ret = Vec::with_capacity(self.n_samples());
        for e in 0..self.n_envs {
            let r = e * self.len..(e + 1) * self.len;
            let (a, g) = gae(
                &self.rewards[r.clone()],
                &self.values[r.clone()],
                &self.dones[r.clone()],
                &self.ends[r.clone()],
                &self.trunc_values[r],
                self.last_values[e],
                gamma,
                lambda,
            );
            adv.extend(a);
            ret.extend(g);
        }
        (adv, ret)
    }
}

/// Generalised advantage estimation over one environment's segment.
///
/// At a terminal step the bootstrap is zero; at a truncated step it is
/// `trunc_values[t]`; the recursion is cut at every episode end. After the
/// last step the bootstrap is `last_value`.
#[allow(clippy::too_many_arguments)]
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    ends: &[bool],
    trunc_values: &[f64],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if dones[t] {
            0.0
        } else if ends[t] {
            trunc_values[t]
        } else if t + 1 < n {
            values[t + 1]
        } else {
            last_value
        };
        let carry = if ends[t] { 0.0 } else { next_adv };
        let delta = rewards[t] + gamma * next_value - values[t];
        adv[t] = delta + gamma * lambda * carry;
        next_adv = adv[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shift to zero mean and scale to unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    adv.iter_mut().for_each(|a| *a -= mean);
    let std = (adv.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    if std > 1e-12 {
        adv.iter_mut().for_each(|a| *a /= std);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoLosses {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Minibatch loss `-surrogate + c_v MSE(V, R) - c_e entropy` and its
/// gradient.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss_and_grad(
    params: &NetworkParams,
    obs: &[f64],
    actions: &[f64],
    old_log_probs: &[f64],
    adv: &[f64],
    returns: &[f64],
    act_dim: usize,
    cfg: &PpoConfig,
) -> Result<(PpoLosses, GradReport)> {
    let b = old_log_probs.len();
    let width = 2 * act_dim + 1;
    let tape = params.tape(obs, b);
    let out = tape.last();
    let mut upstream = vec![0.0; b * width];
    let mut l = PpoLosses::default();
    let bf = b as f64;
    for j in 0..b {
        let row = &out[j * width..(j + 1) * width];
        let pol = split_output(row, act_dim);
        let a = &actions[j * act_dim..(j + 1) * act_dim];
        let logp = gaussian_log_prob(a, &pol.mean, &pol.log_std);
        let log_ratio = logp - old_log_probs[j];
        let ratio = log_ratio.exp();
        let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        let (u, c) = (ratio * adv[j], clipped * adv[j]);
        l.policy_loss -= u.min(c) / bf;
        l.approx_kl += (ratio - 1.0 - log_ratio) / bf;
        if (ratio - 1.0).abs() > cfg.clip_eps {
            l.clip_fraction += 1.0 / bf;
        }
        // d loss / d logp, zero when the clipped branch is the active one
        let dlogp = if u <= c { -u / bf } else { 0.0 };
        let verr = pol.value - returns[j];
        l.value_loss += verr * verr / bf;
        let ent = gaussian_entropy(&pol.log_std);
        l.entropy += ent / bf;
        let g = &mut upstream[j * width..(j + 1) * width];
        for d in 0..act_dim {
            let inv_var = (-2.0 * pol.log_std[d]).exp();
            let diff = a[d] - pol.mean[d];
            g[d] = dlogp * diff * inv_var;
            let raw = row[act_dim + d];
            g[act_dim + d] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                dlogp * (diff * diff * inv_var - 1.0) - cfg.entropy_coef / bf
            } else {
                0.0
            };
        }
        g[2 * act_dim] = cfg.value_coef * 2.0 * verr / bf;
    }
    l.total = l.policy_loss + cfg.value_coef * l.value_loss - cfg.entropy_coef * l.entropy;
    if !l.total.is_finite() {
        return Err(Error::NonFinite("ppo loss"));
    }
    let rep = GradReport::new(params.backward_batch(&tape, &upstream));
    l.grad_norm = rep.l2_norm;
    Ok((l, rep))
}

/// Advantage estimation, per-update normalisation and `epochs` passes of
/// shuffled minibatch Adam steps. Returns losses averaged over minibatches
/// and the gradient norm of every minibatch step.
pub fn ppo_update(
    params: &mut NetworkParams,
    adam: &mut AdamState,
    rollout: &Rollout,
    cfg: &PpoConfig,
    gamma: f64,
    stream: &mut RngStream,
) -> Result<(PpoLosses, Vec<f64>)> {
    let n = rollout.n_samples();
    let (mut adv, ret) = rollout.advantages(gamma, cfg.gae_lambda);
    normalize_advantages(&mut adv);
    let (od, ad) = (rollout.obs_dim, rollout.act_dim);
    let mb = cfg.minibatch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut mean = PpoLosses::default();
    let mut norms = Vec::new();
    for _ in 0..cfg.epochs {
        stream.shuffle(&mut order);
        for chunk in order.chunks(mb) {
            let mut obs = Vec::with_capacity(chunk.len() * od);
            let mut act = Vec::with_capacity(chunk.len() * ad);
            let (mut lp, mut a, mut r) = (Vec::new(), Vec::new(), Vec::new());
            for &i in chunk {
                obs.extend_from_slice(&rollout.obs[i * od..(i + 1) * od]);
                act.extend_from_slice(&rollout.actions[i * ad..(i + 1) * ad]);
                lp.push(rollout.log_probs[i]);
                a.push(adv[i]);
                r.push(ret[i]);
            }
            let (l, rep) = ppo_loss_and_grad(params, &obs, &act, &lp, &a, &r, ad, cfg)?;
            adam_step(params, adam, &rep.grad)?;
            norms.push(rep.l2_norm);
            mean.policy_loss += l.policy_loss;
            mean.value_loss += l.value_loss;
            mean.entropy += l.entropy;
            mean.total += l.total;
            mean.approx_kl += l.approx_kl;
            mean.clip_fraction += l.clip_fraction;
            mean.grad_norm += l.grad_norm;
        }
    }
    let k = norms.len().max(1) as f64;
    for v in [
        &mut mean.policy_loss,
        &mut mean.value_loss,
        &mut mean.entropy,
        &mut mean.total,
        &mut mean.approx_kl,
        &mut mean.clip_fraction,
        &mut mean.grad_norm,
    ] {
        *v /= k;
    }
    Ok((mean, norms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_unit_gaussian() {
        let h = gaussian_entropy(&[0.0, 0.0]);
        assert!((h - (2.0 * PI * E).ln()).abs() < 1e-9);
        assert!((gaussian_entropy(&[0.0]) - 0.5 * (2.0 * PI * E).ln()).abs() < 1e-9);
    }

    #[test]
    fn single_step_episode_advantage() {
        let (adv, ret) = gae(&[1.0], &[0.0], &[true], &[true], &[0.0], 0.0, 0.99, 0.95);
        assert_eq!(adv, vec![1.0]);
        assert_eq!(ret, vec![1.0]);
    }

    #[test]
    fn gae_matches_hand_recursion() {
        let (g, l) = (0.9, 0.8);
        let r = [1.0, 0.0, 2.0];
        let v = [0.5, 0.2, -0.1];
        let last = 0.7;
        let (adv, _) = gae(&r, &v, &[false; 3], &[false; 3], &[0.0; 3], last, g, l);
        let d2 = r[2] + g * last - v[2];
        let d1 = r[1] + g * v[2] - v[1];
        let d0 = r[0] + g * v[1] - v[0];
        let a2 = d2;
        let a1 = d1 + g * l * a2;
        let a0 = d0 + g * l * a1;
        for (x, y) in adv.iter().zip([a0, a1, a2]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_bootstraps_and_cuts() {
        let (adv, _) = gae(&[0.0, 0.0], &[0.0, 0.0], &[false, false], &[true, false], &[5.0, 0.0], 1.0, 0.5, 1.0);
        assert_eq!(adv, vec![2.5, 0.5]);
    }

    #[test]
    fn unit_ratio_surrogate_is_mean_advantage() {
        let adv = [0.3, -1.2, 2.0];
        let s = clipped_surrogate(&[1.0; 3], &adv, 0.2);
        assert!((s - adv.iter().sum::<f64>() / 3.0).abs() < 1e-15);
        let mut norm = adv.to_vec();
        normalize_advantages(&mut norm);
        assert!(clipped_surrogate(&[1.0; 3], &norm, 0.2).abs() < 1e-12);
    }

    #[test]
    fn normalisation_moments() {
        let mut a: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 3.0 + 7.0).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-9);
        assert!((std - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn log_std_is_clamped() {
        let p = split_output(&[0.0, 10.0, 1.0], 1);
        assert_eq!(p.log_std, vec![LOG_STD_MAX]);
        let p = split_output(&[0.0, -10.0, 1.0], 1);
        assert_eq!(p.log_std, vec![LOG_STD_MIN]);
    }

    #[test]
    fn log_prob_matches_closed_form() {
        let lp = gaussian_log_prob(&[0.5], &[0.0], &[0.0]);
        assert!((lp - (-0.125 - 0.5 * (2.0 * PI).ln())).abs() < 1e-14);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = PpoConfig {
            hidden: vec![6, 5],
            ..PpoConfig::default()
        };
        let mut stream = RngStream::new(9);
        let mut p = init_actor_critic(2, 2, &cfg, &mut stream);
        // spread the policy rows so ratios move away from 1
        let last = p.n_layers() - 1;
        for w in p.weights_mut(last).iter_mut() {
            *w *= 30.0;
        }
        let b = 5;
        let obs: Vec<f64> = (0..b * 2).map(|i| (i as f64 * 0.71).sin()).collect();
        let act: Vec<f64> = (0..b * 2).map(|i| (i as f64 * 1.3).cos()).collect();
        let old: Vec<f64> = (0..b).map(|i| -2.0 + 0.01 * i as f64).collect();
        let adv: Vec<f64> = (0..b).map(|i| (i as f64) - 2.0).collect();
        let ret: Vec<f64> = (0..b).map(|i| 0.3 * i as f64).collect();
        let (_, rep) = ppo_loss_and_grad(&p, &obs, &act, &old, &adv, &ret, 2, &cfg).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for k in (0..p.n_params()).step_by(3) {
            let mut hi = p.clone();
            hi.values[k] += h;
            let mut lo = p.clone();
            lo.values[k] -= h;
            let f = |q: &NetworkParams| {
                ppo_loss_and_grad(q, &obs, &act, &old, &adv, &ret, 2, &cfg).unwrap().0.total
            };
            let fd = (f(&hi) - f(&lo)) / (2.0 * h);
            let g = rep.grad[k];
            let scale = fd.abs().max(g.abs());
            if scale > 1e-7 {
                assert!((fd - g).abs() / scale < 1e-4, "param {k}: fd {fd} vs {g}");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}
