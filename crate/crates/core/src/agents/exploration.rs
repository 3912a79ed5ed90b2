use super::AgentConfig;
use crate::RngStream;

/// Linear decay from `eps_start` to `eps_end` over `eps_decay_steps`, then
/// constant.
pub fn epsilon_at(step: usize, cfg: &AgentConfig) -> f64 {
    if step >= cfg.eps_decay_steps {
        return cfg.eps_end;
    }
    let frac = step as f64 / cfg.eps_decay_steps as f64;
    cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)
}

/// Index of the largest value; ties go to the lowest index. NaN entries are
/// never selected unless every entry is NaN.
pub fn argmax_lowest(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of an empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

/// ε-greedy choice. Always consumes one uniform draw, plus one index draw
/// when exploring.
pub fn epsilon_greedy(values: &[f64], step: usize, cfg: &AgentConfig, stream: &mut RngStream) -> usize {
    let eps = epsilon_at(step, cfg);
    if stream.uniform() < eps {
        stream.below(values.len())
    } else {
        argmax_lowest(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = AgentConfig::default();
        assert_eq!(epsilon_at(0, &cfg), 1.0);
        assert_eq!(epsilon_at(1_000_000, &cfg), 0.01);
        assert_eq!(epsilon_at(5_000_000, &cfg), 0.01);
        assert!((epsilon_at(500_000, &cfg) - 0.505).abs() < 1e-12);
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_lowest(&[0.0; 5]), 0);
        assert_eq!(argmax_lowest(&[f64::NAN, 1.0]), 1);
    }

    #[test]
    fn step_zero_is_uniform() {
        let cfg = AgentConfig::default();
        let mut s = RngStream::new(1);
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[epsilon_greedy(&[0.0, 9.0, 0.0, 0.0], 0, &cfg, &mut s)] += 1;
        }
        assert!(counts.iter().all(|&c| c > 850), "{counts:?}");
    }

    #[test]
    fn exploiting_is_greedy() {
        let cfg = AgentConfig {
            eps_end: 0.0,
            eps_decay_steps: 1,
            ..AgentConfig::default()
        };
        let mut s = RngStream::new(1);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&[0.0, 2.0, 2.0], 10, &cfg, &mut s), 1);
        }
    }
}
