use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use toml::{Table, Value};

use chaosrl::agents::LoadedAgent;
use chaosrl::dynamics::{invariant_histogram, lyapunov_max, FlowMap};
use chaosrl::envs::{EnvName, EnvSpec, System};
use chaosrl::harness::config::set_dotted;
use chaosrl::harness::{
    aggregate_run, parse_override, random_baseline, resolve_output, run_experiment, run_probe, EnvConfig,
    Manifest, ProbeSpec, RunConfig,
};
use chaosrl::{Error, Result, RngStream};

#[derive(Parser)]
#[command(name = "chaosrl", version, about = "Chaotic control tasks, agents and smoothness diagnostics")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a run config and aggregate the curves.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted `key=value` override, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a diagnostic probe on a checkpoint.
    Probe {
        kind: ProbeKind,
        #[command(flatten)]
        args: ProbeArgs,
    },
    /// Largest Lyapunov exponent of a system.
    Lyapunov {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, default_value_t = 1_000_000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-9)]
        d0: f64,
        /// Seed for the initial state.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Invariant-density histogram of a 1-D map.
    Invariant {
        #[command(flatten)]
        sys: SystemArgs,
        #[arg(long, default_value_t = 100)]
        bins: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uniform-random-policy reference numbers.
    Baseline {
        #[arg(long, default_value = "logistic")]
        env: String,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full summary as JSON here; the means always go to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild `aggregate.csv` of a run directory from its seed logs.
    Aggregate {
        #[arg(long)]
        runs: PathBuf,
        /// Defaults to the value in the run's manifest.
        #[arg(long)]
        total_steps: Option<usize>,
        #[arg(long)]
        eval_every: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Landscape,
    Lipcurve,
    Surface,
}

impl ProbeKind {
    fn tag(self) -> &'static str {
        match self {
            ProbeKind::Landscape => "landscape",
            ProbeKind::Lipcurve => "lipcurve",
            ProbeKind::Surface => "surface",
        }
    }
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Task for a checkpoint-free lookahead lipcurve; otherwise the
    /// checkpoint's own task.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    m: Option<f64>,
    /// Observation-noise sigma replacing the task's.
    #[arg(long)]
    sigma: Option<f64>,
    /// Discount used when no checkpoint supplies one.
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value = "probe_out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dotted override of the probe settings, e.g. `policy=lookahead`,
    /// `curve.anchors=32`, `resolution=[64,64]`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SystemArgs {
    #[arg(long, default_value = "logistic")]
    system: String,
    /// Logistic parameter.
    #[arg(long)]
    m: Option<f64>,
}

impl SystemArgs {
    fn spec(&self) -> Result<EnvSpec> {
        env_spec(&self.system, self.m, None)
    }
}

fn env_spec(name: &str, m: Option<f64>, sigma: Option<f64>) -> Result<EnvSpec> {
    EnvConfig {
        name: name.parse::<EnvName>()?,
        logistic_m: m,
        obs_noise_sigma: sigma,
        max_steps: None,
        goal_tol: None,
    }
    .spec()
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{v}")?;
    Ok(())
}

/// `Ok(false)` when the run completed but some seed failed.
fn train(config: &Path, seed: Option<u64>, overrides: &[String]) -> Result<bool> {
    let mut cfg = RunConfig::load(config, overrides)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let report = run_experiment(&cfg)?;
    let failed: Vec<_> = report.manifest.seeds.iter().filter(|s| !s.ok).collect();
    print_json(&json!({
        "output_dir": report.dir,
        "seeds": report.manifest.seeds,
        "aggregate_rows": report.curve.len(),
    }))?;
    for s in &failed {
        eprintln!(
            "{}",
            json!({ "error": "seed_failed", "seed": s.seed, "message": s.error.as_deref().unwrap_or("") })
        );
    }
    Ok(failed.is_empty())
}

fn probe(kind: ProbeKind, a: &ProbeArgs) -> Result<()> {
    let mut table = Table::new();
    table.insert("kind".into(), Value::String(kind.tag().into()));
    for o in &a.overrides {
        let (k, v) = parse_override(o)?;
        set_dotted(&mut table, &k, v)?;
    }
    let spec_cfg: ProbeSpec = Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("probe settings: {e}")))?;
    let agent = a.checkpoint.as_deref().map(LoadedAgent::load).transpose()?;
    let (mut spec, gamma) = match (&agent, &a.env) {
        (_, Some(name)) => (env_spec(name, a.m, None)?, agent.as_ref().map_or(a.gamma, |g| g.meta.config.gamma)),
        (Some(g), None) => (g.meta.env.clone(), g.meta.config.gamma),
        (None, None) => return Err(Error::InvalidArgument("need --checkpoint or --env".into())),
    };
    if let Some(s) = a.sigma {
        spec.obs_noise_sigma = s;
        spec.validate()?;
    }
    let dir = resolve_output(&a.out);
    let mut stream = RngStream::derive(a.seed, 0);
    run_probe(&spec_cfg, agent.as_ref(), &spec, gamma, &dir, &mut stream)?;
    print_json(&json!({ "probe": kind.tag(), "output_dir": dir }))
}

fn lyapunov(sys: &SystemArgs, steps: usize, d0: f64, seed: u64) -> Result<()> {
    let spec = sys.spec()?;
    let s0 = spec.sample_initial(&mut RngStream::derive(seed, 0));
    let res = match spec.system {
        System::Map(m) => lyapunov_max(&m, &s0, steps, d0)?,
        System::Flow(f) => lyapunov_max(&FlowMap::new(f, spec.dt, spec.substeps), &s0, steps, d0)?,
    };
    print_json(&json!({
        "system": spec.name(),
        "lambda_max": res.lambda_max,
        "lyapunov_time": res.lyapunov_time(),
        "horizon": res.horizon,
        "renorm_interval": res.renorm_interval,
    }))
}

fn invariant(sys: &SystemArgs, bins: usize, samples: usize, burn_in: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let spec = sys.spec()?;
    let System::Map(m) = spec.system else {
        return Err(Error::InvalidArgument("invariant needs a map".into()));
    };
    let s0 = spec.sample_initial(&mut RngStream::derive(seed, 0));
    let hist = invariant_histogram(&m, &s0, burn_in, samples, bins)?;
    match out {
        Some(p) => {
            let p = resolve_output(p);
            hist.write_csv(io::BufWriter::new(fs::File::create(&p)?))?;
            print_json(&json!({ "bins": hist.bins(), "samples": hist.sample_count, "out": p }))
        }
        None => hist.write_csv(io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.cmd {
        Command::Train { config, seed, overrides } => match train(config, *seed, overrides) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::Probe { kind, args } => probe(*kind, args),
        Command::Lyapunov { sys, steps, d0, seed } => lyapunov(sys, *steps, *d0, *seed),
        Command::Invariant {
            sys,
            bins,
            samples,
            burn_in,
            seed,
            out,
        } => invariant(sys, *bins, *samples, *burn_in, *seed, out.as_deref()),
        Command::Baseline {
            env,
            m,
            sigma,
            episodes,
            seed,
            out,
        } => (|| {
            let spec = env_spec(env, *m, *sigma)?;
            let b = random_baseline(&spec, *episodes, *seed)?;
            if let Some(p) = out {
                fs::write(resolve_output(p), serde_json::to_string_pretty(&b)? + "\n")?;
            }
            print_json(&json!({
                "env": b.env,
                "episodes": b.episodes,
                "seed": b.seed,
                "mean_return": b.mean_return,
                "mean_terminal_distance": b.mean_terminal_distance,
            }))
        })(),
        Command::Aggregate {
            runs,
            total_steps,
            eval_every,
        } => (|| {
            let dir = resolve_output(runs);
            let manifest = Manifest::load(&dir.join("manifest.toml")).ok();
            let pick = |v: Option<usize>, f: fn(&RunConfig) -> usize, what: &str| {
                v.or_else(|| manifest.as_ref().map(|m| f(&m.config)))
                    .ok_or_else(|| Error::InvalidArgument(format!("no manifest in run dir; pass --{what}")))
            };
            let total = pick(*total_steps, |c| c.total_steps, "total-steps")?;
            let every = pick(*eval_every, |c| c.eval_every, "eval-every")?;
            if every == 0 {
                return Err(Error::InvalidArgument("eval_every must be positive".into()));
            }
            let curve = aggregate_run(&dir, total, every)?;
            print_json(&json!({ "output": dir.join("aggregate.csv"), "rows": curve.len() }))
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
