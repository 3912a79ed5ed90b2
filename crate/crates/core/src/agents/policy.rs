use super::exploration::argmax_lowest;
use super::ppo::{split_output, GaussianPolicyOut};
use super::qnet::quantile_means;
use super::quantile::QuantileDistribution;
use crate::envs::{Action, Policy};
use crate::nn::NetworkParams;
use crate::{RngStream, StateVector};

/// Anything that scores each discrete action from an observation.
pub trait ActionValues {
    fn action_values(&self, obs: &[f64]) -> Vec<f64>;
}

impl<Q: ActionValues + ?Sized> ActionValues for &Q {
    fn action_values(&self, obs: &[f64]) -> Vec<f64> {
        (**self).action_values(obs)
    }
}

/// A trained value network: scalar Q or per-action quantiles.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueNet {
    Dqn(NetworkParams),
    Qrdqn { params: NetworkParams, n_quantiles: usize },
}

impl ValueNet {
    pub fn params(&self) -> &NetworkParams {
        match self {
            ValueNet::Dqn(p) => p,
            ValueNet::Qrdqn { params, .. } => params,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            ValueNet::Dqn(p) => p.output_dim(),
            ValueNet::Qrdqn { params, n_quantiles } => params.output_dim() / n_quantiles,
        }
    }

    /// Quantile locations of `Z(obs, action)`; `None` for a scalar network.
    pub fn quantiles(&self, obs: &[f64], action: usize) -> Option<QuantileDistribution> {
        match self {
            ValueNet::Dqn(_) => None,
            ValueNet::Qrdqn { params, n_quantiles } => {
                let out = params.forward(obs);
                let n = *n_quantiles;
                Some(QuantileDistribution::new(out[action * n..(action + 1) * n].to_vec()))
            }
        }
    }
}

impl ActionValues for ValueNet {
    fn action_values(&self, obs: &[f64]) -> Vec<f64> {
        match self {
            ValueNet::Dqn(p) => p.forward(obs),
            ValueNet::Qrdqn { params, n_quantiles } => quantile_means(&params.forward(obs), *n_quantiles),
        }
    }
}

/// Argmax of the action values, lowest index on ties.
#[derive(Clone, Debug)]
pub struct GreedyPolicy<Q>(pub Q);

impl<Q: ActionValues> Policy for GreedyPolicy<Q> {
    fn act(&self, obs: &[f64], _stream: &mut RngStream) -> Action {
        Action::Discrete(argmax_lowest(&self.0.action_values(obs)))
    }
}

/// Boltzmann distribution over action values. Lipschitz in the values, unlike
/// the greedy policy.
#[derive(Clone, Debug)]
pub struct SoftmaxPolicy<Q> {
    pub values: Q,
    pub temperature: f64,
}

impl<Q: ActionValues> SoftmaxPolicy<Q> {
    pub fn new(values: Q, temperature: f64) -> Self {
        assert!(temperature > 0.0, "temperature must be positive");
        Self { values, temperature }
    }

    pub fn probabilities(&self, obs: &[f64]) -> Vec<f64> {
        softmax(&self.values.action_values(obs), self.temperature)
    }
}

pub fn softmax(values: &[f64], temperature: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Inverse-CDF draw from a probability vector using one uniform.
pub fn sample_categorical(probs: &[f64], stream: &mut RngStream) -> usize {
    let u = stream.uniform();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl<Q: ActionValues> Policy for SoftmaxPolicy<Q> {
    fn act(&self, obs: &[f64], stream: &mut RngStream) -> Action {
        Action::Discrete(sample_categorical(&self.probabilities(obs), stream))
    }
}

/// PPO actor: samples from the Gaussian head, or plays its mean.
#[derive(Clone, Debug)]
pub struct GaussianActor {
    pub params: NetworkParams,
    pub act_dim: usize,
    pub deterministic: bool,
}

impl GaussianActor {
    pub fn output(&self, obs: &[f64]) -> GaussianPolicyOut {
        split_output(&self.params.forward(obs), self.act_dim)
    }
}

impl Policy for GaussianActor {
    fn act(&self, obs: &[f64], stream: &mut RngStream) -> Action {
        let out = self.output(obs);
        let a: Vec<f64> = if self.deterministic {
            out.mean
        } else {
            out.mean
                .iter()
                .zip(&out.log_std)
                .map(|(m, ls)| m + ls.exp() * stream.normal())
                .collect()
        };
        Action::Continuous(StateVector::new(&a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<f64>);

    impl ActionValues for Fixed {
        fn action_values(&self, _obs: &[f64]) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn softmax_normalises_and_orders() {
        let p = softmax(&[1.0, 2.0, 0.0], 0.5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[1] > p[0] && p[0] > p[2]);
    }

    #[test]
    fn softmax_policy_frequencies() {
        let pol = SoftmaxPolicy::new(Fixed(vec![0.0, 0.1]), 0.1);
        let probs = pol.probabilities(&[]);
        let mut s = RngStream::new(3);
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| pol.act(&[], &mut s) == Action::Discrete(1))
            .count();
        assert!((hits as f64 / n as f64 - probs[1]).abs() < 0.015);
    }

    #[test]
    fn greedy_ties_lowest() {
        let pol = GreedyPolicy(Fixed(vec![1.0, 1.0]));
        assert_eq!(pol.act(&[], &mut RngStream::new(0)), Action::Discrete(0));
    }
}
