use std::io::Write;

use super::state_columns;
use crate::agents::{argmax_lowest, ActionValues, AgentKind, LoadedAgent, ValueNet};
use crate::harness::csvfmt::fmt_f64;
use crate::{invalid, Result, RngStream, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionChoice {
    /// Highest quantile mean at each state.
    Greedy,
    Fixed(usize),
}

/// Per-state return distributions of a QRDQN agent, as histograms over a
/// shared set of bins and as step CDFs.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionSurface {
    pub states: Vec<StateVector>,
    pub actions: Vec<usize>,
    /// Ascending quantile locations per state.
    pub quantiles: Vec<Vec<f64>>,
    /// `bins + 1` ascending edges shared by every state.
    pub edges: Vec<f64>,
    /// Probability mass per bin, per state.
    pub pdf: Vec<Vec<f64>>,
}

impl DistributionSurface {
    /// `F(z | s_i) = (1/N) Σ 1[z_j(s_i) <= z]`.
    pub fn cdf(&self, i: usize, z: f64) -> f64 {
        let q = &self.quantiles[i];
        q.partition_point(|&v| v <= z) as f64 / q.len() as f64
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn pdf_header(dim: usize) -> String {
        let mut cols = state_columns(dim).to_vec();
        cols.extend(["bin", "mass"]);
        cols.join(",")
    }

    pub fn cdf_header(dim: usize) -> String {
        let mut cols = state_columns(dim).to_vec();
        cols.extend(["z", "cdf"]);
        cols.join(",")
    }

    fn dim(&self) -> usize {
        self.states.first().map_or(1, StateVector::dim)
    }

    /// One row per (state, bin centre).
    pub fn write_pdf_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::pdf_header(self.dim()).split(','))?;
        let centers = self.bin_centers();
        for (s, masses) in self.states.iter().zip(&self.pdf) {
            for (c, m) in centers.iter().zip(masses) {
                let mut row: Vec<String> = s.as_slice().iter().map(|&v| fmt_f64(v)).collect();
                row.push(fmt_f64(*c));
                row.push(fmt_f64(*m));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per (state, bin edge).
    pub fn write_cdf_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::cdf_header(self.dim()).split(','))?;
        for (i, s) in self.states.iter().enumerate() {
            for &z in &self.edges {
                let mut row: Vec<String> = s.as_slice().iter().map(|&v| fmt_f64(v)).collect();
                row.push(fmt_f64(z));
                row.push(fmt_f64(self.cdf(i, z)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Quantile locations of a QRDQN agent over `states`, observed without noise
/// at time zero, histogrammed into `bins` equal-width bins spanning every
/// location on the grid.
pub fn distribution_surface(
    agent: &LoadedAgent,
    states: &[StateVector],
    action: ActionChoice,
    bins: usize,
) -> Result<DistributionSurface> {
    if agent.meta.agent != AgentKind::Qrdqn {
        return Err(invalid("distribution surfaces need a QRDQN checkpoint"));
    }
    if bins == 0 {
        return Err(invalid("bins must be positive"));
    }
    let net = agent.value_net().expect("qrdqn agent has a value net");
    let ValueNet::Qrdqn { n_quantiles, .. } = &net else {
        unreachable!()
    };
    let n = *n_quantiles;
    let spec = agent.meta.env.clone().with_noise(0.0);
    if let ActionChoice::Fixed(a) = action {
        if a >= spec.n_actions() {
            return Err(invalid(format!("action {a} out of range 0..{}", spec.n_actions())));
        }
    }
    // Noise-free observation never draws from the stream.
    let mut unused = RngStream::new(0);
    let mut actions = Vec::with_capacity(states.len());
    let mut quantiles = Vec::with_capacity(states.len());
    for s in states {
        let obs = spec.observe(s, 0.0, &mut unused);
        let out = net.params().forward(&obs);
        let a = match action {
            ActionChoice::Greedy => argmax_lowest(&net.action_values(&obs)),
            ActionChoice::Fixed(a) => a,
        };
        let mut q = out[a * n..(a + 1) * n].to_vec();
        q.sort_by(f64::total_cmp);
        actions.push(a);
        quantiles.push(q);
    }
    let (mut lo, mut hi) = quantiles
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if quantiles.is_empty() {
        (lo, hi) = (0.0, 1.0);
    } else if hi <= lo {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    edges[bins] = hi;
    let pdf = quantiles
        .iter()
        .map(|q| {
            let mut mass = vec![0.0; bins];
            for &z in q {
                let b = (((z - lo) / width) as usize).min(bins - 1);
                mass[b] += 1.0;
            }
            mass.iter_mut().for_each(|m| *m /= n as f64);
            mass
        })
        .collect();
    Ok(DistributionSurface {
        states: states.to_vec(),
        actions,
        quantiles,
        edges,
        pdf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{qnet::qrdqn_widths, AgentConfig, AgentMeta};
    use crate::envs::EnvSpec;
    use crate::nn::{init_params, shapes_for, NetworkParams};

    fn agent(params: NetworkParams, n: usize) -> LoadedAgent {
        let spec = EnvSpec::logistic(3.8);
        LoadedAgent {
            meta: AgentMeta {
                agent: AgentKind::Qrdqn,
                env: spec,
                config: AgentConfig {
                    n_quantiles: n,
                    hidden: vec![8],
                    ..AgentConfig::default()
                },
                env_step: 0,
                seed: 0,
            },
            online: params,
            target: None,
        }
    }

    fn states() -> Vec<StateVector> {
        (0..10).map(|i| StateVector::x(0.05 + 0.09 * i as f64)).collect()
    }

    #[test]
    fn degenerate_distribution_is_one_bin() {
        let n = 5;
        let mut p = NetworkParams::from_widths(&qrdqn_widths(1, 11, n, &[8]));
        p.bias_mut(1).iter_mut().for_each(|b| *b = 1.5);
        let surf = distribution_surface(&agent(p, n), &states(), ActionChoice::Greedy, 7).unwrap();
        for (i, masses) in surf.pdf.iter().enumerate() {
            assert_eq!(masses.iter().filter(|&&m| m > 0.0).count(), 1);
            assert_eq!(masses.iter().sum::<f64>(), 1.0);
            assert_eq!(surf.cdf(i, 1.5 - 1e-12), 0.0);
            assert_eq!(surf.cdf(i, 1.5), 1.0);
        }
    }

    #[test]
    fn random_network_surfaces_are_normalised() {
        let n = 21;
        let p = init_params(shapes_for(&qrdqn_widths(1, 11, n, &[8])), &mut RngStream::new(4));
        let surf = distribution_surface(&agent(p, n), &states(), ActionChoice::Fixed(3), 16).unwrap();
        for (i, masses) in surf.pdf.iter().enumerate() {
            assert!((masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let max = *surf.quantiles[i].last().unwrap();
            assert_eq!(surf.cdf(i, max), 1.0);
            let cdf: Vec<f64> = surf.edges.iter().map(|&z| surf.cdf(i, z)).collect();
            assert!(cdf.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(*cdf.last().unwrap(), 1.0);
        }
        assert!(surf.actions.iter().all(|&a| a == 3));
    }

    #[test]
    fn rejects_scalar_agents() {
        let p = NetworkParams::from_widths(&[1, 8, 11]);
        let mut a = agent(p, 1);
        a.meta.agent = AgentKind::Dqn;
        assert!(distribution_surface(&a, &states(), ActionChoice::Greedy, 4).is_err());
    }
}
