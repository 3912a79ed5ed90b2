use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, eval_grid, AggregateCurve, SeedLog};
use super::config::{ProbePolicy, ProbeSpec, RunConfig};
use super::csvfmt::fmt_f64;
use crate::agents::{train, AgentKind, LoadedAgent, SoftmaxPolicy, TrainOutcome};
use crate::diagnostics::{
    distribution_surface, domain_grid, estimate_onestep_constants, landscape_scan,
    return_lipschitz_curve, ActionChoice, ClosedLoop, EnvLoop, OneStepLookahead, PROBE_TEMPERATURE,
};
use crate::envs::EnvSpec;
use crate::{invalid, Error, Result, RngStream};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const UPDATES_HEADER: &str = "update,loss,grad_norm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub episodes: usize,
}

/// What a run directory contains: the resolved config, the code version and
/// the per-seed outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config: RunConfig,
    #[serde(default)]
    pub seeds: Vec<SeedStatus>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub curve: AggregateCurve,
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn write_updates(outcome: &TrainOutcome, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(UPDATES_HEADER.split(','))?;
    for (i, (l, g)) in outcome.losses.iter().zip(&outcome.grad_norms).enumerate() {
        w.write_record([i.to_string(), fmt_f64(*l), fmt_f64(*g)])?;
    }
    w.flush()?;
    Ok(())
}

/// Run one probe and write its CSVs into `dir`. `agent` is required except
/// for a lookahead-policy lipcurve, which only needs `spec`.
pub fn run_probe(
    probe: &ProbeSpec,
    agent: Option<&LoadedAgent>,
    spec: &EnvSpec,
    gamma: f64,
    dir: &Path,
    stream: &mut RngStream,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let need_agent = || agent.ok_or_else(|| invalid(format!("probe `{}` needs a checkpoint", probe.name())));
    match probe {
        ProbeSpec::Landscape(p) => {
            let agent = need_agent()?;
            let grid = domain_grid(spec, p.resolution.as_deref(), p.max_points, stream)?;
            let scan = landscape_scan(agent, &grid, p.k_neighbors, stream)?;
            scan.write_csv(create(&dir.join("landscape.csv"))?)?;
        }
        ProbeSpec::Surface(p) => {
            let agent = need_agent()?;
            let grid = domain_grid(spec, p.resolution.as_deref(), p.max_points, stream)?;
            let action = p.action.map_or(ActionChoice::Greedy, ActionChoice::Fixed);
            let surf = distribution_surface(agent, &grid, action, p.bins)?;
            surf.write_pdf_csv(create(&dir.join("surface_pdf.csv"))?)?;
            surf.write_cdf_csv(create(&dir.join("surface_cdf.csv"))?)?;
        }
        ProbeSpec::Lipcurve(p) => {
            let run = |model: &dyn ClosedLoop, stream: &mut RngStream| -> Result<()> {
                let probe = estimate_onestep_constants(model, gamma, &p.onestep, stream)?;
                let curve = return_lipschitz_curve(model, gamma, &probe, &p.curve, stream)?;
                curve.write_csv(create(&dir.join("lipcurve.csv"))?)?;
                fs::write(dir.join("lipprobe.json"), serde_json::to_string_pretty(&probe)? + "\n")?;
                Ok(())
            };
            match p.policy {
                ProbePolicy::Lookahead => {
                    let pol = SoftmaxPolicy::new(OneStepLookahead::new(spec.clone()), PROBE_TEMPERATURE);
                    run(&EnvLoop::new(spec, pol), stream)?;
                }
                ProbePolicy::Agent => {
                    let agent = need_agent()?;
                    match agent.value_net() {
                        Some(q) => {
                            let pol = SoftmaxPolicy::new(q, PROBE_TEMPERATURE);
                            run(&EnvLoop::new(spec, pol), stream)?;
                        }
                        None => {
                            let actor = agent.actor(false).expect("ppo agent");
                            run(&EnvLoop::new(spec, actor), stream)?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn run_seed(cfg: &RunConfig, spec: &EnvSpec, seed: u64, dir: &Path) -> Result<usize> {
    fs::create_dir_all(dir)?;
    let outcome = train(cfg.agent, spec, &cfg.agent_config, cfg.total_steps, seed)?;
    outcome.write_log_csv(create(&dir.join("train_log.csv"))?)?;
    if cfg.agent != AgentKind::Ppo {
        write_updates(&outcome, &dir.join("updates.csv"))?;
    }
    for ck in &outcome.checkpoints {
        let step = ck.meta.get("env_step").and_then(|v| v.as_u64()).unwrap_or(0);
        ck.save(&dir.join(format!("checkpoint_{step}.json")))?;
    }
    outcome.final_checkpoint.save(&dir.join("checkpoint_final.json"))?;
    if !cfg.probes.is_empty() {
        let agent = LoadedAgent::from_checkpoint(&outcome.final_checkpoint)?;
        for (i, probe) in cfg.probes.iter().enumerate() {
            let mut stream = RngStream::derive(seed, 1000 + i as u64);
            let pdir = dir.join(format!("probe_{i}_{}", probe.name()));
            run_probe(probe, Some(&agent), spec, cfg.agent_config.gamma, &pdir, &mut stream)?;
        }
    }
    Ok(outcome.episodes.len())
}

/// Aggregate every `seed_*/train_log.csv` under `run_dir` into
/// `aggregate.csv`.
pub fn aggregate_run(run_dir: &Path, total_steps: usize, eval_every: usize) -> Result<AggregateCurve> {
    let mut dirs: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(run_dir)? {
        let path = entry?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|s| s.parse().ok());
        if let Some(seed) = seed {
            if path.join("train_log.csv").is_file() {
                dirs.push((seed, path));
            }
        }
    }
    dirs.sort();
    let logs = dirs
        .iter()
        .map(|(_, d)| SeedLog::read_csv(fs::File::open(d.join("train_log.csv"))?))
        .collect::<Result<Vec<_>>>()?;
    let curve = aggregate(&logs, &eval_grid(total_steps, eval_every));
    curve.write_csv(create(&run_dir.join("aggregate.csv"))?)?;
    Ok(curve)
}

/// Train every seed (in parallel), run the configured probes on each final
/// checkpoint, aggregate the curves and write the manifest.
///
/// A failing seed is recorded in the manifest and does not stop the others;
/// the run as a whole errors only when the configuration is unusable or the
/// directory cannot be written.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let spec = cfg.env_spec()?;
    let dir = cfg.output_path();
    fs::create_dir_all(&dir)?;
    let statuses: Vec<SeedStatus> = cfg
        .seeds
        .par_iter()
        .map(|&seed| match run_seed(cfg, &spec, seed, &seed_dir(&dir, seed)) {
            Ok(episodes) => SeedStatus {
                seed,
                ok: true,
                error: None,
                episodes,
            },
            Err(e) => SeedStatus {
                seed,
                ok: false,
                error: Some(format!("{}: {e}", e.kind())),
                episodes: 0,
            },
        })
        .collect();
    let curve = aggregate_run(&dir, cfg.total_steps, cfg.eval_every)?;
    let manifest = Manifest {
        code_version: CODE_VERSION.to_string(),
        config: cfg.clone(),
        seeds: statuses,
    };
    fs::write(dir.join("manifest.toml"), manifest.to_toml())?;
    Ok(RunReport { dir, manifest, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &Path, extra: &str) -> RunConfig {
        let text = format!(
            "agent = \"dqn\"\nseeds = [1]\ntotal_steps = 0\noutput_dir = \"{}\"\n{extra}[env]\nname = \"logistic\"\n",
            dir.display()
        );
        RunConfig::parse(&text, &[]).unwrap()
    }

    #[test]
    fn zero_step_run_writes_manifest_and_empty_curve() {
        let tmp = tempfile::tempdir().unwrap();
        let c = cfg(tmp.path(), "");
        let rep = run_experiment(&c).unwrap();
        assert!(rep.curve.is_empty());
        assert!(rep.manifest.seeds[0].ok);
        let m = Manifest::load(&tmp.path().join("manifest.toml")).unwrap();
        assert_eq!(m.config, c);
        let agg = fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
        assert_eq!(agg, "env_step,mean_return,q10,q90\n");
    }

    #[test]
    fn failing_seed_is_isolated() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = cfg(tmp.path(), "");
        c.seeds = vec![1, 2];
        c.total_steps = 300;
        c.agent_config.warmup_steps = 64;
        c.agent_config.hidden = vec![8];
        // lookahead probes work without trouble; landscape with an impossible
        // resolution fails inside the seed
        c.probes = vec![ProbeSpec::Landscape(super::super::config::LandscapeProbeConfig {
            resolution: Some(vec![0]),
            ..Default::default()
        })];
        let rep = run_experiment(&c).unwrap();
        assert!(rep.manifest.seeds.iter().all(|s| !s.ok && s.error.is_some()));
        // training artifacts were still written before the probe failed
        assert!(seed_dir(&rep.dir, 1).join("train_log.csv").is_file());
        assert_eq!(rep.curve.len(), 0);
    }
}
