use serde::{Deserialize, Serialize};

use crate::envs::{rollout, EnvSpec, RandomPolicy};
use crate::{Result, RngStream};

/// Uniform-random-policy reference numbers for a task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub env: String,
    pub seed: u64,
    pub episodes: usize,
    /// Undiscounted return per episode.
    pub returns: Vec<f64>,
    /// Distance to the goal (fixed point for maps) at each episode's end.
    pub terminal_distances: Vec<f64>,
    pub mean_return: Option<f64>,
    pub mean_terminal_distance: Option<f64>,
}

/// Roll out `episodes` episodes of the uniform-random policy.
pub fn random_baseline(spec: &EnvSpec, episodes: usize, seed: u64) -> Result<BaselineSummary> {
    spec.validate()?;
    let policy = RandomPolicy {
        n_actions: spec.n_actions(),
    };
    let mut stream = RngStream::derive(seed, 0);
    let mut out = BaselineSummary {
        env: spec.name().to_string(),
        seed,
        episodes,
        ..BaselineSummary::default()
    };
    for _ in 0..episodes {
        let log = rollout(spec, &policy, 0.99, stream.next_u64())?;
        let end = log.final_state().expect("episodes take at least one step");
        out.returns.push(log.return_undiscounted);
        out.terminal_distances.push(spec.goal_distance(&end));
    }
    if episodes > 0 {
        let n = episodes as f64;
        out.mean_return = Some(out.returns.iter().sum::<f64>() / n);
        out.mean_terminal_distance = Some(out.terminal_distances.iter().sum::<f64>() / n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_episodes_is_empty() {
        let b = random_baseline(&EnvSpec::logistic(3.8), 0, 1).unwrap();
        assert!(b.returns.is_empty());
        assert_eq!(b.mean_return, None);
    }

    #[test]
    fn reproducible_and_positive() {
        let spec = EnvSpec::logistic(3.8);
        let a = random_baseline(&spec, 20, 7).unwrap();
        assert_eq!(a, random_baseline(&spec, 20, 7).unwrap());
        assert_ne!(a.returns, random_baseline(&spec, 20, 8).unwrap().returns);
        assert!(a.mean_terminal_distance.unwrap() > 0.0);
    }
}
