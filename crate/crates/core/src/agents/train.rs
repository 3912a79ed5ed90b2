use std::io::Write;

use serde::{Deserialize, Serialize};

use super::exploration::{epsilon_at, epsilon_greedy};
use super::policy::{GaussianActor, ValueNet};
use super::ppo::{gaussian_log_prob, init_actor_critic, ppo_update, split_output, Rollout};
use super::qnet::{dqn_update, dqn_widths, qrdqn_update, qrdqn_widths, quantile_means, MeanHead};
use super::replay::ReplayBuffer;
use super::{AgentConfig, AgentKind};
use crate::envs::{Action, EnvInstance, EnvSpec};
use crate::harness::csvfmt::fmt_f64;
use crate::nn::{init_params, shapes_for, AdamConfig, AdamState, NetworkCheckpoint, NetworkParams};
use crate::{Error, Result, RngStream, StateVector};

/// What an agent checkpoint carries besides the network values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub agent: AgentKind,
    pub env: EnvSpec,
    pub config: AgentConfig,
    pub env_step: usize,
    pub seed: u64,
}

/// A network checkpoint reopened as an agent.
#[derive(Clone, Debug)]
pub struct LoadedAgent {
    pub meta: AgentMeta,
    pub online: NetworkParams,
    pub target: Option<NetworkParams>,
}

impl LoadedAgent {
    pub fn from_checkpoint(ck: &NetworkCheckpoint) -> Result<Self> {
        ck.validate()?;
        let meta: AgentMeta = serde_json::from_value(ck.meta.clone())
            .map_err(|e| Error::Checkpoint(format!("agent metadata: {e}")))?;
        Ok(Self {
            meta,
            online: ck.params(),
            target: ck.target_params(),
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&NetworkCheckpoint::load(path)?)
    }

    pub fn value_net(&self) -> Option<ValueNet> {
        match self.meta.agent {
            AgentKind::Dqn => Some(ValueNet::Dqn(self.online.clone())),
            AgentKind::Qrdqn => Some(ValueNet::Qrdqn {
                params: self.online.clone(),
                n_quantiles: self.meta.config.n_quantiles,
            }),
            AgentKind::Ppo => None,
        }
    }

    pub fn target_value_net(&self) -> Option<ValueNet> {
        let t = self.target.clone()?;
        match self.meta.agent {
            AgentKind::Dqn => Some(ValueNet::Dqn(t)),
            AgentKind::Qrdqn => Some(ValueNet::Qrdqn {
                params: t,
                n_quantiles: self.meta.config.n_quantiles,
            }),
            AgentKind::Ppo => None,
        }
    }

    pub fn actor(&self, deterministic: bool) -> Option<GaussianActor> {
        (self.meta.agent == AgentKind::Ppo).then(|| GaussianActor {
            params: self.online.clone(),
            act_dim: self.meta.env.action_dim(),
            deterministic,
        })
    }
}

/// One finished training episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// Environment steps taken so far, counted at the end of the episode.
    pub env_step: usize,
    pub episode: usize,
    pub ret: f64,
    pub length: usize,
    /// Exploration rate at the episode's last step (NaN for PPO).
    pub epsilon: f64,
    /// Mean loss / gradient norm of the updates made during the episode
    /// (NaN if none).
    pub loss: f64,
    pub grad_norm: f64,
    pub terminal_distance: f64,
    pub diverged: bool,
}

pub const TRAIN_LOG_HEADER: [&str; 7] = ["env_step", "episode", "return", "length", "epsilon", "loss", "grad_norm"];

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub kind: AgentKind,
    pub seed: u64,
    pub total_steps: usize,
    pub episodes: Vec<EpisodeRecord>,
    /// Gradient norm of every update, in order.
    pub grad_norms: Vec<f64>,
    pub losses: Vec<f64>,
    /// Periodic checkpoints (`config.checkpoint_every`), oldest first.
    pub checkpoints: Vec<NetworkCheckpoint>,
    pub final_checkpoint: NetworkCheckpoint,
}

impl TrainOutcome {
    pub fn diverged_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| e.diverged).count()
    }

    /// Episodes that ended within the last `frac` of the step budget.
    pub fn final_episodes(&self, frac: f64) -> &[EpisodeRecord] {
        let cutoff = (1.0 - frac) * self.total_steps as f64;
        let start = self.episodes.partition_point(|e| (e.env_step as f64) <= cutoff);
        &self.episodes[start..]
    }

    pub fn mean_terminal_distance(&self, frac: f64) -> Option<f64> {
        mean(self.final_episodes(frac).iter().map(|e| e.terminal_distance))
    }

    pub fn mean_return(&self, frac: f64) -> Option<f64> {
        mean(self.final_episodes(frac).iter().map(|e| e.ret))
    }

    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRAIN_LOG_HEADER)?;
        for e in &self.episodes {
            w.write_record([
                e.env_step.to_string(),
                e.episode.to_string(),
                fmt_f64(e.ret),
                e.length.to_string(),
                fmt_f64(e.epsilon),
                fmt_f64(e.loss),
                fmt_f64(e.grad_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

// Sub-stream keys under the run seed.
const KEY_INIT: u64 = 1;
const KEY_ENV: u64 = 2;
const KEY_POLICY: u64 = 3;
const KEY_REPLAY: u64 = 4;
const KEY_SHUFFLE: u64 = 5;
const KEY_ENV_BASE: u64 = 100;

/// Train one agent from scratch. Fully determined by the arguments.
pub fn train(kind: AgentKind, spec: &EnvSpec, cfg: &AgentConfig, total_steps: usize, seed: u64) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    match kind {
        AgentKind::Dqn | AgentKind::Qrdqn => train_value(kind, spec, cfg, total_steps, seed),
        AgentKind::Ppo => train_ppo(spec, cfg, total_steps, seed),
    }
}

struct Checkpointer<'a> {
    kind: AgentKind,
    spec: &'a EnvSpec,
    cfg: &'a AgentConfig,
    seed: u64,
}

impl Checkpointer<'_> {
    fn make(
        &self,
        online: &NetworkParams,
        target: Option<&NetworkParams>,
        adam: &AdamState,
        rng: &RngStream,
        env_step: usize,
    ) -> Result<NetworkCheckpoint> {
        let mut ck = NetworkCheckpoint::new(online);
        ck.target_values = target.map(|t| t.values.clone());
        ck.adam = Some(adam.clone());
        ck.rng = Some(rng.position());
        ck.meta = serde_json::to_value(AgentMeta {
            agent: self.kind,
            env: self.spec.clone(),
            config: self.cfg.clone(),
            env_step,
            seed: self.seed,
        })?;
        Ok(ck)
    }
}

#[derive(Default)]
struct EpisodeAcc {
    ret: f64,
    len: usize,
    loss_sum: f64,
    grad_sum: f64,
    updates: usize,
}

impl EpisodeAcc {
    fn finish(&mut self, env_step: usize, episode: usize, epsilon: f64, distance: f64, diverged: bool) -> EpisodeRecord {
        let k = self.updates as f64;
        let rec = EpisodeRecord {
            env_step,
            episode,
            ret: self.ret,
            length: self.len,
            epsilon,
            loss: if self.updates > 0 { self.loss_sum / k } else { f64::NAN },
            grad_norm: if self.updates > 0 { self.grad_sum / k } else { f64::NAN },
            terminal_distance: distance,
            diverged,
        };
        *self = Self::default();
        rec
    }
}

fn train_value(kind: AgentKind, spec: &EnvSpec, cfg: &AgentConfig, total_steps: usize, seed: u64) -> Result<TrainOutcome> {
    let n_actions = spec.n_actions();
    let obs_dim = spec.obs_dim();
    let nq = cfg.n_quantiles;
    let widths = match kind {
        AgentKind::Dqn => dqn_widths(obs_dim, n_actions, &cfg.hidden),
        _ => qrdqn_widths(obs_dim, n_actions, nq, &cfg.hidden),
    };
    let mut online = init_params(shapes_for(&widths), &mut RngStream::derive(seed, KEY_INIT));
    let mut target = online.clone();
    let mut head = (kind == AgentKind::Qrdqn).then(|| MeanHead::new(&target, n_actions, nq));
    let mut adam = AdamState::new(online.n_params(), AdamConfig::with_lr(cfg.lr));
    let mut env_stream = RngStream::derive(seed, KEY_ENV);
    let mut policy_stream = RngStream::derive(seed, KEY_POLICY);
    let mut replay_stream = RngStream::derive(seed, KEY_REPLAY);
    let mut replay = ReplayBuffer::new(cfg.buffer_capacity, obs_dim);
    let ckp = Checkpointer { kind, spec, cfg, seed };

    let mut out = TrainOutcome {
        kind,
        seed,
        total_steps,
        episodes: Vec::new(),
        grad_norms: Vec::new(),
        losses: Vec::new(),
        checkpoints: Vec::new(),
        final_checkpoint: ckp.make(&online, Some(&target), &adam, &policy_stream, 0)?,
    };
    let mut env = EnvInstance::new(spec.clone(), &mut env_stream);
    let mut acc = EpisodeAcc::default();
    let learn_after = cfg.warmup_steps.max(cfg.batch_size);

    for step in 0..total_steps {
        let values = match kind {
            AgentKind::Dqn => online.forward(&env.obs),
            _ => quantile_means(&online.forward(&env.obs), nq),
        };
        let a = epsilon_greedy(&values, step, cfg, &mut policy_stream);
        let obs = env.obs.clone();
        let tr = env.step(&Action::Discrete(a), &mut env_stream)?;
        replay.push(&obs, a, tr.r, &tr.obs_next, tr.done || tr.diverged);
        acc.ret += tr.r;
        acc.len += 1;

        if replay.len() >= learn_after {
            let batch = replay.sample(cfg.batch_size, &mut replay_stream);
            let (loss, rep) = match &head {
                None => dqn_update(&mut online, &mut adam, &target, &batch, cfg)?,
                Some(h) => qrdqn_update(&mut online, &mut adam, &target, h, &batch, cfg)?,
            };
            out.losses.push(loss);
            out.grad_norms.push(rep.l2_norm);
            acc.loss_sum += loss;
            acc.grad_sum += rep.l2_norm;
            acc.updates += 1;
        }
        if (step + 1) % cfg.target_update_every == 0 {
            target.values.copy_from_slice(&online.values);
            if head.is_some() {
                head = Some(MeanHead::new(&target, n_actions, nq));
            }
        }
        if tr.ends_episode() {
            let dist = spec.goal_distance(&tr.s_next);
            let rec = acc.finish(step + 1, out.episodes.len(), epsilon_at(step, cfg), dist, tr.diverged);
            out.episodes.push(rec);
            env.reset(&mut env_stream);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total_steps {
            out.checkpoints
                .push(ckp.make(&online, Some(&target), &adam, &policy_stream, step + 1)?);
        }
    }
    out.final_checkpoint = ckp.make(&online, Some(&target), &adam, &policy_stream, total_steps)?;
    Ok(out)
}

fn train_ppo(spec: &EnvSpec, cfg: &AgentConfig, total_steps: usize, seed: u64) -> Result<TrainOutcome> {
    let pc = &cfg.ppo;
    let obs_dim = spec.obs_dim();
    let act_dim = spec.action_dim();
    let width = 2 * act_dim + 1;
    let mut params = init_actor_critic(obs_dim, act_dim, pc, &mut RngStream::derive(seed, KEY_INIT));
    let mut adam = AdamState::new(params.n_params(), AdamConfig::with_lr(pc.lr));
    let mut policy_stream = RngStream::derive(seed, KEY_POLICY);
    let mut shuffle_stream = RngStream::derive(seed, KEY_SHUFFLE);
    let ckp = Checkpointer {
        kind: AgentKind::Ppo,
        spec,
        cfg,
        seed,
    };
    let mut out = TrainOutcome {
        kind: AgentKind::Ppo,
        seed,
        total_steps,
        episodes: Vec::new(),
        grad_norms: Vec::new(),
        losses: Vec::new(),
        checkpoints: Vec::new(),
        final_checkpoint: ckp.make(&params, None, &adam, &policy_stream, 0)?,
    };
    if total_steps == 0 {
        return Ok(out);
    }
    let n_envs = pc.n_envs;
    let mut env_streams: Vec<RngStream> = (0..n_envs)
        .map(|e| RngStream::derive(seed, KEY_ENV_BASE + e as u64))
        .collect();
    let mut envs: Vec<EnvInstance> = env_streams
        .iter_mut()
        .map(|s| EnvInstance::new(spec.clone(), s))
        .collect();
    let mut accs: Vec<EpisodeAcc> = (0..n_envs).map(|_| EpisodeAcc::default()).collect();
    let mut env_step = 0usize;
    let mut next_checkpoint = cfg.checkpoint_every;

    while env_step < total_steps {
        let remaining = total_steps - env_step;
        let len = pc.rollout_len.min(remaining.div_ceil(n_envs));
        let mut ro = Rollout::new(obs_dim, act_dim, n_envs, len);
        for t in 0..len {
            let obs_batch: Vec<f64> = envs.iter().flat_map(|e| e.obs.iter().copied()).collect();
            let outs = params.forward_batch(&obs_batch, n_envs);
            for e in 0..n_envs {
                let i = e * len + t;
                let pol = split_output(&outs[e * width..(e + 1) * width], act_dim);
                let a: Vec<f64> = pol
                    .mean
                    .iter()
                    .zip(&pol.log_std)
                    .map(|(m, ls)| m + ls.exp() * policy_stream.normal())
                    .collect();
                ro.obs[i * obs_dim..(i + 1) * obs_dim].copy_from_slice(&envs[e].obs);
                ro.actions[i * act_dim..(i + 1) * act_dim].copy_from_slice(&a);
                ro.log_probs[i] = gaussian_log_prob(&a, &pol.mean, &pol.log_std);
                ro.values[i] = pol.value;
                let tr = envs[e].step(&Action::Continuous(StateVector::new(&a)), &mut env_streams[e])?;
                env_step += 1;
                ro.rewards[i] = tr.r;
                let terminal = tr.done || tr.diverged;
                ro.dones[i] = terminal;
                ro.ends[i] = tr.ends_episode();
                accs[e].ret += tr.r;
                accs[e].len += 1;
                if tr.ends_episode() {
                    if !terminal {
                        ro.trunc_values[i] = params.forward(&tr.obs_next)[2 * act_dim];
                    }
                    let dist = spec.goal_distance(&tr.s_next);
                    let rec = accs[e].finish(env_step, out.episodes.len(), f64::NAN, dist, tr.diverged);
                    out.episodes.push(rec);
                    envs[e].reset(&mut env_streams[e]);
                }
            }
        }
        let obs_batch: Vec<f64> = envs.iter().flat_map(|e| e.obs.iter().copied()).collect();
        let outs = params.forward_batch(&obs_batch, n_envs);
        for e in 0..n_envs {
            ro.last_values[e] = outs[e * width + 2 * act_dim];
        }
        let (losses, norms) = ppo_update(&mut params, &mut adam, &ro, pc, cfg.gamma, &mut shuffle_stream)?;
        out.losses.push(losses.total);
        out.grad_norms.extend(&norms);
        // attribute the update to every episode still running
        for a in &mut accs {
            a.loss_sum += losses.total;
            a.grad_sum += losses.grad_norm;
            a.updates += 1;
        }
        if cfg.checkpoint_every > 0 && env_step >= next_checkpoint && env_step < total_steps {
            out.checkpoints.push(ckp.make(&params, None, &adam, &policy_stream, env_step)?);
            next_checkpoint += cfg.checkpoint_every;
        }
    }
    out.final_checkpoint = ckp.make(&params, None, &adam, &policy_stream, env_step)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> AgentConfig {
        AgentConfig {
            hidden: vec![16, 16],
            n_quantiles: 11,
            warmup_steps: 50,
            batch_size: 16,
            buffer_capacity: 1000,
            eps_decay_steps: 200,
            ppo: super::super::PpoConfig {
                n_envs: 2,
                rollout_len: 32,
                minibatch_size: 16,
                hidden: vec![16, 16],
                ..Default::default()
            },
            ..AgentConfig::default()
        }
    }

    #[test]
    fn zero_steps_gives_untrained_checkpoint() {
        for kind in [AgentKind::Dqn, AgentKind::Qrdqn, AgentKind::Ppo] {
            let out = train(kind, &EnvSpec::logistic(3.8), &small_cfg(), 0, 1).unwrap();
            assert!(out.episodes.is_empty());
            assert!(out.grad_norms.is_empty());
            let agent = LoadedAgent::from_checkpoint(&out.final_checkpoint).unwrap();
            assert_eq!(agent.meta.env_step, 0);
            assert_eq!(agent.meta.agent, kind);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        for kind in [AgentKind::Dqn, AgentKind::Qrdqn, AgentKind::Ppo] {
            let a = train(kind, &EnvSpec::logistic(3.8), &small_cfg(), 600, 7).unwrap();
            let b = train(kind, &EnvSpec::logistic(3.8), &small_cfg(), 600, 7).unwrap();
            let (mut ca, mut cb) = (Vec::new(), Vec::new());
            a.write_log_csv(&mut ca).unwrap();
            b.write_log_csv(&mut cb).unwrap();
            assert_eq!(ca, cb);
            assert_eq!(a.final_checkpoint, b.final_checkpoint);
            assert!(!a.episodes.is_empty(), "{kind}");
        }
    }

    #[test]
    fn updates_start_after_warmup() {
        let out = train(AgentKind::Dqn, &EnvSpec::logistic(3.8), &small_cfg(), 120, 3).unwrap();
        assert_eq!(out.grad_norms.len(), 120 - 50 + 1);
    }

    #[test]
    fn periodic_checkpoints() {
        let cfg = AgentConfig {
            checkpoint_every: 100,
            ..small_cfg()
        };
        let out = train(AgentKind::Qrdqn, &EnvSpec::logistic(3.8), &cfg, 350, 3).unwrap();
        let steps: Vec<usize> = out
            .checkpoints
            .iter()
            .map(|c| LoadedAgent::from_checkpoint(c).unwrap().meta.env_step)
            .collect();
        assert_eq!(steps, vec![100, 200, 300]);
    }

    #[test]
    fn log_header_is_stable() {
        let out = train(AgentKind::Dqn, &EnvSpec::logistic(3.8), &small_cfg(), 0, 1).unwrap();
        let mut buf = Vec::new();
        out.write_log_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "env_step,episode,return,length,epsilon,loss,grad_norm\n");
    }
}
