use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::csvfmt::fmt_f64;
use crate::diagnostics::quantile_sorted;
use crate::{Error, Result};

pub const AGGREGATE_HEADER: &str = "env_step,mean_return,q10,q90";

/// Episode returns of one seed, keyed by the env step at which each episode
/// ended.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedLog {
    pub env_steps: Vec<usize>,
    pub returns: Vec<f64>,
}

impl SeedLog {
    /// Read the `env_step` and `return` columns of a training log.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidArgument(format!("training log has no `{name}` column")))
        };
        let (si, ri) = (col("env_step")?, col("return")?);
        let mut log = SeedLog::default();
        for rec in r.records() {
            let rec = rec?;
            let step = rec[si]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad env_step `{}`", &rec[si])))?;
            let ret = rec[ri]
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad return `{}`", &rec[ri])))?;
            log.env_steps.push(step);
            log.returns.push(ret);
        }
        Ok(log)
    }

    /// Linear interpolation at `step`, held constant beyond the first and
    /// last episodes. `None` for an empty log.
    pub fn interpolate(&self, step: usize) -> Option<f64> {
        let n = self.env_steps.len();
        if n == 0 {
            return None;
        }
        let x = step as f64;
        let i = self.env_steps.partition_point(|&s| s <= step);
        if i == 0 {
            return Some(self.returns[0]);
        }
        if i == n {
            return Some(self.returns[n - 1]);
        }
        let (x0, x1) = (self.env_steps[i - 1] as f64, self.env_steps[i] as f64);
        let (y0, y1) = (self.returns[i - 1], self.returns[i]);
        Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
    }
}

/// Mean and 10% / 90% empirical quantiles across seeds on a common grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub env_steps: Vec<usize>,
    pub mean_return: Vec<f64>,
    pub q10: Vec<f64>,
    pub q90: Vec<f64>,
}

impl AggregateCurve {
    pub fn len(&self) -> usize {
        self.env_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.env_steps.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(AGGREGATE_HEADER.split(','))?;
        for i in 0..self.len() {
            w.write_record([
                self.env_steps[i].to_string(),
                fmt_f64(self.mean_return[i]),
                fmt_f64(self.q10[i]),
                fmt_f64(self.q90[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `eval_every, 2 eval_every, …` up to `total_steps`.
pub fn eval_grid(total_steps: usize, eval_every: usize) -> Vec<usize> {
    assert!(eval_every > 0, "eval_every must be positive");
    (1..=total_steps / eval_every).map(|k| k * eval_every).collect()
}

/// Interpolate every non-empty seed onto `grid` and reduce across seeds.
/// Quantiles interpolate linearly between order statistics, so with a single
/// seed all three columns coincide.
pub fn aggregate(logs: &[SeedLog], grid: &[usize]) -> AggregateCurve {
    let live: Vec<&SeedLog> = logs.iter().filter(|l| !l.env_steps.is_empty()).collect();
    let mut out = AggregateCurve::default();
    if live.is_empty() {
        return out;
    }
    for &step in grid {
        let mut vals: Vec<f64> = live.iter().filter_map(|l| l.interpolate(step)).collect();
        vals.sort_by(f64::total_cmp);
        out.env_steps.push(step);
        out.mean_return.push(vals.iter().sum::<f64>() / vals.len() as f64);
        out.q10.push(quantile_sorted(&vals, 0.1));
        out.q90.push(quantile_sorted(&vals, 0.9));
    }
    out
}
