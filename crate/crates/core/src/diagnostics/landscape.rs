use std::io::Write;

use rayon::prelude::*;

use super::state_columns;
use crate::agents::qnet::{
    dqn_loss_and_grad, dqn_td_target, qrdqn_loss_and_grad, qrdqn_target_samples, MeanHead,
};
use crate::agents::{argmax_lowest, ActionValues, AgentKind, Batch, LoadedAgent};
use crate::dynamics::MapSystem;
use crate::envs::{env_step, Action, EnvSpec, System};
use crate::harness::csvfmt::fmt_f64;
use crate::{invalid, Error, Result, RngStream, StateVector};

/// Points at which [`landscape_scan`] ran.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapePoint {
    pub state: StateVector,
    /// Greedy action value (quantile mean for QRDQN).
    pub q: f64,
    pub one_step_error: f64,
    pub grad_l2: f64,
    pub local_grad_var: f64,
    /// False when the point could not be evaluated; its numbers are NaN.
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub agent: AgentKind,
    pub points: Vec<LandscapePoint>,
}

impl LandscapeGrid {
    pub fn header(dim: usize) -> String {
        let mut cols: Vec<&str> = state_columns(dim).to_vec();
        cols.extend(["q", "one_step_err", "grad_l2", "local_grad_var"]);
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.points.first().map_or(1, |p| p.state.dim());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::header(dim).split(','))?;
        for p in &self.points {
            let mut row: Vec<String> = p.state.as_slice().iter().map(|&v| fmt_f64(v)).collect();
            row.extend([p.q, p.one_step_error, p.grad_l2, p.local_grad_var].map(fmt_f64));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
}

/// Cell-centre grid over the environment domain.
///
/// Default resolutions: 512 (logistic), 64 x 64 (Ikeda, over its attractor
/// box), 128 x 64 (double gyre), 32³ (ABC). Grids above `cap` points are
/// subsampled without replacement, keeping grid order.
pub fn domain_grid(
    spec: &EnvSpec,
    resolution: Option<&[usize]>,
    cap: usize,
    stream: &mut RngStream,
) -> Result<Vec<StateVector>> {
    let (bounds, default): (Vec<(f64, f64)>, Vec<usize>) = match spec.system {
        System::Map(MapSystem::Logistic { .. }) => (vec![(0.0, 1.0)], vec![512]),
        System::Map(MapSystem::Ikeda { .. }) => (vec![(-0.5, 1.5), (-1.5, 1.0)], vec![64, 64]),
        System::Flow(f) => {
            let res = if f.dim() == 2 { vec![128, 64] } else { vec![32; 3] };
            (f.bounds(), res)
        }
    };
    let res = resolution.map_or(default, <[usize]>::to_vec);
    if res.len() != bounds.len() || res.contains(&0) {
        return Err(invalid(format!(
            "grid resolution needs {} positive entries",
            bounds.len()
        )));
    }
    let axes: Vec<Vec<f64>> = bounds.iter().zip(&res).map(|(&(lo, hi), &n)| axis(lo, hi, n)).collect();
    let mut points = vec![Vec::new()];
    for ax in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                ax.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    let mut grid: Vec<StateVector> = points.iter().map(|p| StateVector::new(p)).collect();
    if grid.len() > cap {
        let mut idx: Vec<usize> = (0..grid.len()).collect();
        stream.shuffle(&mut idx);
        idx.truncate(cap);
        idx.sort_unstable();
        grid = idx.into_iter().map(|i| grid[i]).collect();
    }
    Ok(grid)
}

/// `var / mean²` of `values` over each point's `k` nearest points (itself
/// included). Non-finite entries are ignored; 0 when the local mean is 0.
pub fn local_relative_variance(spec: &EnvSpec, states: &[StateVector], values: &[f64], k: usize) -> Vec<f64> {
    assert_eq!(states.len(), values.len());
    let finite: Vec<usize> = (0..states.len()).filter(|&i| values[i].is_finite()).collect();
    (0..states.len())
        .into_par_iter()
        .map(|i| {
            if !values[i].is_finite() || finite.is_empty() {
                return f64::NAN;
            }
            let mut d: Vec<(f64, usize)> = finite
                .iter()
                .map(|&j| (spec.distance(&states[i], &states[j]), j))
                .collect();
            let kk = k.clamp(1, d.len());
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if kk < d.len() {
                d.select_nth_unstable_by(kk - 1, cmp);
            }
            let vals: Vec<f64> = d[..kk].iter().map(|&(_, j)| values[j]).collect();
            let mean = vals.iter().sum::<f64>() / kk as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / kk as f64;
            if mean == 0.0 {
                0.0
            } else {
                var / (mean * mean)
            }
        })
        .collect()
}

struct Evaluated {
    q: f64,
    err: f64,
    grad: f64,
}

fn evaluate_point(agent: &LoadedAgent, s: &StateVector, mut stream: RngStream) -> Result<Evaluated> {
    let spec = &agent.meta.env;
    let cfg = &agent.meta.config;
    let online = agent.value_net().ok_or_else(|| invalid("landscape needs a DQN or QRDQN agent"))?;
    let target = agent.target.as_ref().unwrap_or(&agent.online);
    let obs = spec.observe(s, 0.0, &mut stream);
    let values = online.action_values(&obs);
    let a = argmax_lowest(&values);
    let tr = env_step(spec, s, &Action::Discrete(a), 0.0, &mut stream)?;
    let mut batch = Batch::new(obs.len());
    batch.push(&obs, a, tr.r, &tr.obs_next, tr.done || tr.diverged);
    let (loss, rep) = match agent.meta.agent {
        AgentKind::Dqn => {
            let y = dqn_td_target(&batch, target, cfg.gamma);
            dqn_loss_and_grad(&agent.online, &batch, &y)?
        }
        AgentKind::Qrdqn => {
            let n = cfg.n_quantiles;
            let head = MeanHead::new(target, spec.n_actions(), n);
            let (y, _) = qrdqn_target_samples(&batch, target, &head, cfg.gamma, n);
            qrdqn_loss_and_grad(&agent.online, &batch, &y, n, cfg.huber_kappa)?
        }
        AgentKind::Ppo => return Err(invalid("landscape needs a DQN or QRDQN agent")),
    };
    if !rep.l2_norm.is_finite() {
        return Err(Error::NonFinite("landscape gradient"));
    }
    Ok(Evaluated {
        q: values[a],
        err: loss,
        grad: rep.l2_norm,
    })
}

/// One-step loss and gradient norm of a value agent at every grid state.
///
/// At each state the agent acts greedily on its own observation, one fresh
/// transition is drawn, and the agent's training loss on that single
/// transition (squared TD error for DQN, quantile-Huber for QRDQN, both
/// against the checkpoint's target network) is backpropagated. Points that
/// fail are flagged and the scan carries on.
pub fn landscape_scan(
    agent: &LoadedAgent,
    grid: &[StateVector],
    k_neighbors: usize,
    stream: &mut RngStream,
) -> Result<LandscapeGrid> {
    if agent.meta.agent == AgentKind::Ppo {
        return Err(invalid("landscape needs a DQN or QRDQN agent"));
    }
    let base = stream.fork();
    let evals: Vec<Result<Evaluated>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, s)| evaluate_point(agent, s, base.split(i as u64)))
        .collect();
    let grads: Vec<f64> = evals
        .iter()
        .map(|e| e.as_ref().map_or(f64::NAN, |e| e.grad))
        .collect();
    let local = local_relative_variance(&agent.meta.env, grid, &grads, k_neighbors);
    let points = grid
        .iter()
        .zip(evals)
        .zip(local)
        .map(|((s, e), lv)| match e {
            Ok(e) => LandscapePoint {
                state: *s,
                q: e.q,
                one_step_error: e.err,
                grad_l2: e.grad,
                local_grad_var: lv,
                ok: true,
            },
            Err(_) => LandscapePoint {
                state: *s,
                q: f64::NAN,
                one_step_error: f64::NAN,
                grad_l2: f64::NAN,
                local_grad_var: f64::NAN,
                ok: false,
            },
        })
        .collect();
    Ok(LandscapeGrid {
        agent: agent.meta.agent,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{qnet::dqn_widths, AgentConfig, AgentMeta};
    use crate::nn::NetworkParams;

    fn constant_dqn(spec: &EnvSpec, c: f64) -> LoadedAgent {
        let cfg = AgentConfig {
            hidden: vec![4],
            ..AgentConfig::default()
        };
        let mut p = NetworkParams::from_widths(&dqn_widths(spec.obs_dim(), spec.n_actions(), &cfg.hidden));
        p.bias_mut(1).iter_mut().for_each(|b| *b = c);
        LoadedAgent {
            meta: AgentMeta {
                agent: AgentKind::Dqn,
                env: spec.clone(),
                config: cfg,
                env_step: 0,
                seed: 0,
            },
            online: p.clone(),
            target: Some(p),
        }
    }

    #[test]
    fn constant_output_on_terminal_env() {
        // goal radius covers the whole interval: every step is terminal
        let mut spec = EnvSpec::logistic(3.8);
        spec.goal_tol = 10.0;
        let c = 0.25;
        let agent = constant_dqn(&spec, c);
        let grid = domain_grid(&spec, Some(&[32]), usize::MAX, &mut RngStream::new(0)).unwrap();
        let scan = landscape_scan(&agent, &grid, 5, &mut RngStream::new(1)).unwrap();
        for p in &scan.points {
            assert!(p.ok);
            assert_eq!(p.q, c);
            // greedy ties go to action 0, the most negative control
            let next = crate::envs::dynamics_step(&spec, &p.state, &Action::Discrete(0), 0.0).unwrap();
            let r = spec.reward_at(&next);
            assert!((p.one_step_error - (c - r).powi(2)).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_field_has_zero_local_variance() {
        let spec = EnvSpec::ikeda();
        let grid = domain_grid(&spec, Some(&[6, 5]), usize::MAX, &mut RngStream::new(0)).unwrap();
        let v = local_relative_variance(&spec, &grid, &vec![2.5; grid.len()], 5);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn local_variance_by_hand() {
        let spec = EnvSpec::logistic(3.8);
        let states: Vec<StateVector> = [0.0, 0.1, 0.2, 0.9].iter().map(|&x| StateVector::x(x)).collect();
        let v = local_relative_variance(&spec, &states, &[1.0, 3.0, 5.0, f64::NAN], 2);
        // point 0: {1, 3} -> var 1, mean 2 -> 0.25
        assert!((v[0] - 0.25).abs() < 1e-15);
        // point 1: nearest are itself and 0.0 (tie with 0.2 broken by index)
        assert!((v[1] - 0.25).abs() < 1e-15);
        assert!(v[3].is_nan());
    }

    #[test]
    fn grid_sizes_and_cap() {
        let mut r = RngStream::new(0);
        assert_eq!(domain_grid(&EnvSpec::logistic(3.8), None, usize::MAX, &mut r).unwrap().len(), 512);
        assert_eq!(domain_grid(&EnvSpec::double_gyre(), None, usize::MAX, &mut r).unwrap().len(), 128 * 64);
        let spec = EnvSpec::abc();
        let abc = domain_grid(&spec, None, 8192, &mut r).unwrap();
        assert_eq!(abc.len(), 8192);
        assert!(abc.iter().all(|s| spec.in_domain(s)));
        assert!(domain_grid(&spec, Some(&[4, 4]), 10, &mut r).is_err());
    }
}
