//! Value-based learners: DQN (scalar Q) and QRDQN (N quantiles per action).
//!
//! QRDQN's output layer is `n_actions` contiguous blocks of `N` quantile
//! locations. Training only touches the block of the taken action, so the
//! forward/backward passes run the hidden stack once and then a single
//! `N`-row slice of the output layer per sample.

use super::quantile::quantile_huber_loss_grad;
use super::replay::Batch;
use super::AgentConfig;
use crate::nn::{adam_step, AdamState, GradReport, NetworkParams};
use crate::{Error, Result};

pub fn dqn_widths(obs_dim: usize, n_actions: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![obs_dim];
    w.extend_from_slice(hidden);
    w.push(n_actions);
    w
}

pub fn qrdqn_widths(obs_dim: usize, n_actions: usize, n_quantiles: usize, hidden: &[usize]) -> Vec<usize> {
    dqn_widths(obs_dim, n_actions * n_quantiles, hidden)
}

/// Per-action means of a QRDQN output row (`n_actions * n` values).
pub fn quantile_means(out: &[f64], n: usize) -> Vec<f64> {
    out.chunks_exact(n)
        .map(|q| q.iter().sum::<f64>() / n as f64)
        .collect()
}

/// Output layer collapsed to per-action quantile means: row `a` of the
/// weights is the average of the `N` rows of block `a`. Gives the greedy
/// action without evaluating all `n_actions * N` outputs.
#[derive(Clone, Debug)]
pub struct MeanHead {
    weights: Vec<f64>,
    bias: Vec<f64>,
    hidden: usize,
    n_actions: usize,
}

impl MeanHead {
    pub fn new(p: &NetworkParams, n_actions: usize, n: usize) -> Self {
        let last = p.n_layers() - 1;
        let shape = p.layer_shapes[last];
        assert_eq!(shape.outputs, n_actions * n, "output width is not n_actions * N");
        let w = p.weights(last);
        let b = p.bias(last);
        let h = shape.inputs;
        let mut weights = vec![0.0; n_actions * h];
        let mut bias = vec![0.0; n_actions];
        for a in 0..n_actions {
            let row = &mut weights[a * h..(a + 1) * h];
            for i in 0..n {
                let src = &w[(a * n + i) * h..(a * n + i + 1) * h];
                for (r, s) in row.iter_mut().zip(src) {
                    *r += s;
                }
                bias[a] += b[a * n + i];
            }
            row.iter_mut().for_each(|r| *r /= n as f64);
            bias[a] /= n as f64;
        }
        Self {
            weights,
            bias,
            hidden: h,
            n_actions,
        }
    }

    /// Equivalent scalar-Q network: same hidden stack, mean head on top.
    pub fn as_network(&self, p: &NetworkParams) -> NetworkParams {
        let last = p.n_layers() - 1;
        let mut widths: Vec<usize> = p.layer_shapes.iter().map(|s| s.inputs).collect();
        widths.push(self.n_actions);
        let mut q = NetworkParams::from_widths(&widths);
        for l in 0..last {
            q.weights_mut(l).copy_from_slice(p.weights(l));
            q.bias_mut(l).copy_from_slice(p.bias(l));
        }
        q.weights_mut(last).copy_from_slice(&self.weights);
        q.bias_mut(last).copy_from_slice(&self.bias);
        q
    }

    /// Means for `batch` rows of last-hidden activations.
    pub fn means(&self, hidden: &[f64], batch: usize) -> Vec<f64> {
        let h = self.hidden;
        let mut out = Vec::with_capacity(batch * self.n_actions);
        for b in 0..batch {
            let x = &hidden[b * h..(b + 1) * h];
            for a in 0..self.n_actions {
                let w = &self.weights[a * h..(a + 1) * h];
                out.push(self.bias[a] + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>());
            }
        }
        out
    }
}

/// `y_j = r_j + γ max_a' Q_target(s'_j, a')`, or `r_j` when terminal.
pub fn dqn_td_target(batch: &Batch, target: &NetworkParams, gamma: f64) -> Vec<f64> {
    assert!(!batch.is_empty(), "empty batch");
    let q = target.forward_batch(&batch.next_obs, batch.len());
    let a = target.output_dim();
    (0..batch.len())
        .map(|j| {
            if batch.dones[j] {
                batch.rewards[j]
            } else {
                let best = q[j * a..(j + 1) * a].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                batch.rewards[j] + gamma * best
            }
        })
        .collect()
}

/// Mean squared TD error on the taken actions and its parameter gradient.
pub fn dqn_loss_and_grad(online: &NetworkParams, batch: &Batch, targets: &[f64]) -> Result<(f64, GradReport)> {
    let n = batch.len();
    assert_eq!(targets.len(), n);
    let a = online.output_dim();
    let tape = online.tape(&batch.obs, n);
    let q = tape.last();
    let mut upstream = vec![0.0; n * a];
    let mut loss = 0.0;
    for j in 0..n {
        let act = batch.actions[j];
        let err = q[j * a + act] - targets[j];
        loss += err * err;
        upstream[j * a + act] = 2.0 * err / n as f64;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("dqn loss"));
    }
    let grad = online.backward_batch(&tape, &upstream);
    Ok((loss, GradReport::new(grad)))
}

/// Bootstrapped quantile targets, `batch x N`, and the greedy next actions
/// (argmax of target quantile means, lowest index on ties).
pub fn qrdqn_target_samples(
    batch: &Batch,
    target: &NetworkParams,
    head: &MeanHead,
    gamma: f64,
    n: usize,
) -> (Vec<f64>, Vec<usize>) {
    let b = batch.len();
    let tape = target.tape_hidden(&batch.next_obs, b);
    let means = head.means(tape.last(), b);
    let na = head.n_actions;
    let greedy: Vec<usize> = (0..b)
        .map(|j| super::argmax_lowest(&means[j * na..(j + 1) * na]))
        .collect();
    let starts: Vec<usize> = greedy.iter().map(|&a| a * n).collect();
    let z = target.head_block_forward(&tape, &starts, n);
    let mut out = Vec::with_capacity(b * n);
    for j in 0..b {
        let r = batch.rewards[j];
        if batch.dones[j] {
            out.extend(std::iter::repeat_n(r, n));
        } else {
            out.extend(z[j * n..(j + 1) * n].iter().map(|&zi| r + gamma * zi));
        }
    }
    (out, greedy)
}

/// Batch-mean quantile-Huber loss on the taken actions' quantiles.
pub fn qrdqn_loss_and_grad(
    online: &NetworkParams,
    batch: &Batch,
    targets: &[f64],
    n: usize,
    kappa: f64,
) -> Result<(f64, GradReport)> {
    let b = batch.len();
    assert_eq!(targets.len(), b * n);
    let tape = online.tape_hidden(&batch.obs, b);
    let starts: Vec<usize> = batch.actions.iter().map(|&a| a * n).collect();
    let pred = online.head_block_forward(&tape, &starts, n);
    let mut upstream = vec![0.0; b * n];
    let mut loss = 0.0;
    for j in 0..b {
        let g = &mut upstream[j * n..(j + 1) * n];
        loss += quantile_huber_loss_grad(&pred[j * n..(j + 1) * n], &targets[j * n..(j + 1) * n], kappa, g);
        g.iter_mut().for_each(|v| *v /= b as f64);
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("qrdqn loss"));
    }
    let mut grad = vec![0.0; online.n_params()];
    online.head_block_backward(&tape, &starts, n, &upstream, &mut grad);
    Ok((loss, GradReport::new(grad)))
}

fn apply(online: &mut NetworkParams, adam: &mut AdamState, rep: &GradReport, clip: Option<f64>) -> Result<()> {
    match clip {
        Some(c) if rep.l2_norm > c => {
            let s = c / rep.l2_norm;
            let clipped: Vec<f64> = rep.grad.iter().map(|g| g * s).collect();
            adam_step(online, adam, &clipped)
        }
        _ => adam_step(online, adam, &rep.grad),
    }
}

/// One DQN gradient step. The returned gradient is the unclipped one.
pub fn dqn_update(
    online: &mut NetworkParams,
    adam: &mut AdamState,
    target: &NetworkParams,
    batch: &Batch,
    cfg: &AgentConfig,
) -> Result<(f64, GradReport)> {
    let y = dqn_td_target(batch, target, cfg.gamma);
    let (loss, rep) = dqn_loss_and_grad(online, batch, &y)?;
    apply(online, adam, &rep, cfg.grad_clip)?;
    Ok((loss, rep))
}

/// One QRDQN gradient step against a fixed target network.
pub fn qrdqn_update(
    online: &mut NetworkParams,
    adam: &mut AdamState,
    target: &NetworkParams,
    head: &MeanHead,
    batch: &Batch,
    cfg: &AgentConfig,
) -> Result<(f64, GradReport)> {
    let n = cfg.n_quantiles;
    let (y, _) = qrdqn_target_samples(batch, target, head, cfg.gamma, n);
    let (loss, rep) = qrdqn_loss_and_grad(online, batch, &y, n, cfg.huber_kappa)?;
    apply(online, adam, &rep, cfg.grad_clip)?;
    Ok((loss, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, shapes_for};
    use crate::RngStream;

    fn batch_1d(rows: &[(f64, usize, f64, f64, bool)]) -> Batch {
        let mut b = Batch::new(1);
        for &(s, a, r, s2, d) in rows {
            b.push(&[s], a, r, &[s2], d);
        }
        b
    }

    #[test]
    fn terminal_target_is_the_reward() {
        let net = init_params(shapes_for(&[1, 8, 3]), &mut RngStream::new(1));
        let b = batch_1d(&[(0.1, 0, -0.25, 0.7, true)]);
        assert_eq!(dqn_td_target(&b, &net, 0.99), vec![-0.25]);
    }

    #[test]
    fn zero_target_net_gives_reward() {
        let net = NetworkParams::from_widths(&[1, 8, 3]);
        let b = batch_1d(&[(0.1, 0, 0.5, 0.7, false), (0.2, 1, -1.5, 0.3, false)]);
        assert_eq!(dqn_td_target(&b, &net, 0.99), vec![0.5, -1.5]);
    }

    #[test]
    fn stub_network_target_arithmetic() {
        // single linear layer with biases (1, 2): max Q' = 2 whatever s'
        let mut net = NetworkParams::from_widths(&[1, 2]);
        net.bias_mut(0).copy_from_slice(&[1.0, 2.0]);
        let b = batch_1d(&[(0.0, 0, 1.0, 0.4, false)]);
        let y = dqn_td_target(&b, &net, 0.99);
        assert!((y[0] - 2.98).abs() < 1e-12);
    }

    #[test]
    fn loss_zero_when_targets_match_predictions() {
        let net = init_params(shapes_for(&[1, 8, 3]), &mut RngStream::new(2));
        let b = batch_1d(&[(0.1, 2, 0.0, 0.0, true), (0.6, 0, 0.0, 0.0, true)]);
        let q = net.forward_batch(&b.obs, 2);
        let y = vec![q[2], q[3]];
        let (loss, rep) = dqn_loss_and_grad(&net, &b, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(rep.l2_norm, 0.0);
    }

    #[test]
    fn single_transition_loss_is_squared_error() {
        let net = init_params(shapes_for(&[1, 8, 3]), &mut RngStream::new(3));
        let b = batch_1d(&[(0.3, 1, 0.0, 0.0, true)]);
        let p = net.forward(&[0.3])[1];
        let (loss, _) = dqn_loss_and_grad(&net, &b, &[2.0]).unwrap();
        assert!((loss - (p - 2.0).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn mean_head_matches_full_means() {
        let net = init_params(shapes_for(&[2, 16, 3 * 5]), &mut RngStream::new(4));
        let head = MeanHead::new(&net, 3, 5);
        let x = [0.3, -0.8, 1.1, 0.2];
        let full = net.forward_batch(&x, 2);
        let tape = net.tape_hidden(&x, 2);
        let m = head.means(tape.last(), 2);
        for j in 0..2 {
            let expect = quantile_means(&full[j * 15..(j + 1) * 15], 5);
            for a in 0..3 {
                assert!((m[j * 3 + a] - expect[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quantile_targets_collapse_when_done() {
        let net = init_params(shapes_for(&[1, 8, 2 * 4]), &mut RngStream::new(5));
        let head = MeanHead::new(&net, 2, 4);
        let b = batch_1d(&[(0.1, 0, 3.0, 0.5, true)]);
        let (y, _) = qrdqn_target_samples(&b, &net, &head, 0.9, 4);
        assert_eq!(y, vec![3.0; 4]);
    }
}
