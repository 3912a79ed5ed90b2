//! Run configuration: a TOML document, dotted-key overrides, and resolution
//! of every defaulted field so the resolved form can be written to a manifest
//! and read back unchanged.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::agents::{AgentConfig, AgentKind};
use crate::diagnostics::{CurveSettings, ProbeSettings};
use crate::envs::{EnvName, EnvSpec};
use crate::{Error, Result};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "CHAOSRL_OUTPUT_ROOT";

pub const DEFAULT_SEED_COUNT: usize = 6;

/// Task selection plus optional overrides of the stock spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    /// Logistic parameter `m` (logistic only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logistic_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_tol: Option<f64>,
}

impl EnvConfig {
    pub fn spec(&self) -> Result<EnvSpec> {
        let mut spec = match (self.name, self.logistic_m) {
            (EnvName::Logistic, Some(m)) => EnvSpec::logistic(m),
            (_, Some(_)) => return Err(Error::Config("logistic_m only applies to the logistic task".into())),
            (name, None) => name.spec(),
        };
        if let Some(s) = self.obs_noise_sigma {
            spec.obs_noise_sigma = s;
        }
        if let Some(n) = self.max_steps {
            spec.max_steps = n;
        }
        if let Some(g) = self.goal_tol {
            spec.goal_tol = g;
        }
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    fn resolve(&self) -> Result<Self> {
        let spec = self.spec()?;
        Ok(Self {
            name: self.name,
            logistic_m: match (self.name, spec.system) {
                (EnvName::Logistic, crate::envs::System::Map(crate::dynamics::MapSystem::Logistic { m })) => Some(m),
                _ => None,
            },
            obs_noise_sigma: Some(spec.obs_noise_sigma),
            max_steps: Some(spec.max_steps),
            goal_tol: Some(spec.goal_tol),
        })
    }
}

/// Policy the return-sensitivity probe follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbePolicy {
    /// Softmax (temperature 0.1) over the agent's action values; the PPO
    /// actor samples its Gaussian.
    Agent,
    /// Softmax over one-step lookahead rewards; needs no checkpoint.
    Lookahead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeProbeConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Vec<usize>>,
    pub k_neighbors: usize,
    pub max_points: usize,
}

impl Default for LandscapeProbeConfig {
    fn default() -> Self {
        Self {
            resolution: None,
            k_neighbors: 5,
            max_points: 8192,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipcurveProbeConfig {
    pub policy: ProbePolicy,
    pub onestep: ProbeSettings,
    pub curve: CurveSettings,
}

impl Default for LipcurveProbeConfig {
    fn default() -> Self {
        Self {
            policy: ProbePolicy::Agent,
            onestep: ProbeSettings::default(),
            curve: CurveSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceProbeConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Vec<usize>>,
    pub bins: usize,
    /// Fixed action index; greedy when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    pub max_points: usize,
}

impl Default for SurfaceProbeConfig {
    fn default() -> Self {
        Self {
            resolution: None,
            bins: 50,
            action: None,
            max_points: 8192,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeSpec {
    Landscape(LandscapeProbeConfig),
    Lipcurve(LipcurveProbeConfig),
    Surface(SurfaceProbeConfig),
}

impl ProbeSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProbeSpec::Landscape(_) => "landscape",
            ProbeSpec::Lipcurve(_) => "lipcurve",
            ProbeSpec::Surface(_) => "surface",
        }
    }
}

/// A complete experiment description. After [`RunConfig::parse`] every field
/// is explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub agent: AgentKind,
    pub seeds: Vec<u64>,
    pub total_steps: usize,
    /// Spacing of the env-step grid used by the aggregate curve.
    pub eval_every: usize,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub agent_config: AgentConfig,
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
}

/// Split `key=value`; the value is read as a TOML value when it parses as
/// one, otherwise as a bare string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

/// Set `path` (dotted) inside `table`, creating intermediate tables.
pub fn set_dotted(table: &mut Table, path: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{path}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn to_table<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v).expect("config types serialise") {
        Value::Table(t) => t,
        _ => unreachable!("structs serialise to tables"),
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    /// Parse a config document, apply `overrides` and fill every default.
    ///
    /// Defaults: six consecutive seeds from `base_seed` (0), a step budget of
    /// 2e5 for maps and 5e5 for flows, `eval_every` of 1000, output under
    /// `runs/<name>`, and the desk-scale agent settings for that budget.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut raw: Table = text.parse().map_err(config_err)?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_dotted(&mut raw, &k, v)?;
        }
        let env: EnvConfig = raw
            .get("env")
            .cloned()
            .ok_or_else(|| Error::Config("missing [env] table".into()))?
            .try_into()
            .map_err(config_err)?;
        let env = env.resolve()?;
        let is_map = env.spec()?.is_map();
        let total_steps = match raw.get("total_steps") {
            Some(v) => v
                .as_integer()
                .filter(|&n| n >= 0)
                .ok_or_else(|| Error::Config("total_steps must be a non-negative integer".into()))?
                as usize,
            None if is_map => 200_000,
            None => 500_000,
        };
        let base_seed = match raw.remove("base_seed") {
            Some(v) => v
                .as_integer()
                .filter(|&n| n >= 0)
                .ok_or_else(|| Error::Config("base_seed must be a non-negative integer".into()))?
                as u64,
            None => 0,
        };
        let name = raw
            .get("name")
            .and_then(Value::as_str)
            .unwrap_or("run")
            .to_string();

        let mut agent_config = to_table(&AgentConfig::desk_scale(total_steps));
        if let Some(user) = raw.remove("agent_config") {
            let user = match user {
                Value::Table(t) => t,
                _ => return Err(Error::Config("agent_config must be a table".into())),
            };
            merge(&mut agent_config, user);
        }

        let mut full = Table::new();
        full.insert("name".into(), Value::String(name.clone()));
        full.insert(
            "seeds".into(),
            Value::Array(
                (0..DEFAULT_SEED_COUNT as i64)
                    .map(|i| Value::Integer(base_seed as i64 + i))
                    .collect(),
            ),
        );
        full.insert("total_steps".into(), Value::Integer(total_steps as i64));
        full.insert("eval_every".into(), Value::Integer(1000));
        full.insert("output_dir".into(), Value::String(format!("runs/{name}")));
        merge(&mut full, raw);
        full.insert("env".into(), Value::Table(to_table(&env)));
        full.insert("agent_config".into(), Value::Table(agent_config));

        let cfg: RunConfig = Value::Table(full).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        self.agent_config.validate()?;
        self.env.spec()?;
        Ok(())
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        self.env.spec()
    }

    /// The resolved config as a TOML document.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// `output_dir`, placed under `$CHAOSRL_OUTPUT_ROOT` when that is set and
    /// the directory is relative.
    pub fn output_path(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "agent = \"dqn\"\n[env]\nname = \"logistic\"\n";

    #[test]
    fn defaults_are_filled() {
        let c = RunConfig::parse(MINIMAL, &[]).unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(c.total_steps, 200_000);
        assert_eq!(c.agent_config.buffer_capacity, 100_000);
        assert_eq!(c.agent_config.eps_decay_steps, 50_000);
        assert_eq!(c.env.logistic_m, Some(3.8));
        assert_eq!(c.output_dir, PathBuf::from("runs/run"));
    }

    #[test]
    fn flows_default_to_larger_budget() {
        let c = RunConfig::parse("agent = \"ppo\"\n[env]\nname = \"double_gyre\"\n", &[]).unwrap();
        assert_eq!(c.total_steps, 500_000);
        assert_eq!(c.env.logistic_m, None);
    }

    #[test]
    fn overrides_apply_dotted_keys() {
        let c = RunConfig::parse(
            MINIMAL,
            &[
                "agent_config.lr=0.005".into(),
                "agent_config.ppo.epochs=2".into(),
                "env.obs_noise_sigma=0.001".into(),
                "seeds=[3, 9]".into(),
                "name=probe-run".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.agent_config.lr, 0.005);
        assert_eq!(c.agent_config.ppo.epochs, 2);
        assert_eq!(c.env.obs_noise_sigma, Some(0.001));
        assert_eq!(c.seeds, vec![3, 9]);
        assert_eq!(c.name, "probe-run");
        // an explicit buffer size beats the desk-scale default
        let c = RunConfig::parse(MINIMAL, &["agent_config.buffer_capacity=77".into()]).unwrap();
        assert_eq!(c.agent_config.buffer_capacity, 77);
    }

    #[test]
    fn base_seed_shifts_the_default_seeds() {
        let c = RunConfig::parse(&format!("base_seed = 10\n{MINIMAL}"), &[]).unwrap();
        assert_eq!(c.seeds, (10..16).collect::<Vec<u64>>());
    }

    #[test]
    fn resolved_round_trip_is_exact() {
        let text = format!(
            "{MINIMAL}[agent_config]\nlr = 0.1\n[[probes]]\nkind = \"lipcurve\"\npolicy = \"lookahead\"\n[[probes]]\nkind = \"surface\"\nbins = 7\n"
        );
        let c = RunConfig::parse(&text, &[]).unwrap();
        let again = RunConfig::parse(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.probes.len(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("agent = \"dqn\"\n", &[]).is_err());
        assert!(RunConfig::parse(MINIMAL, &["seeds=[1, 1]".into()]).is_err());
        assert!(RunConfig::parse(MINIMAL, &["agent_config.nope=1".into()]).is_err());
        assert!(RunConfig::parse(MINIMAL, &["bogus".into()]).is_err());
        assert!(RunConfig::parse(MINIMAL, &["env.logistic_m=5.5".into()]).is_err());
        let e = RunConfig::parse("agent = \"sarsa\"\n[env]\nname = \"logistic\"\n", &[]).unwrap_err();
        assert_eq!(e.kind(), "config");
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_override("a.b=3").unwrap(), ("a.b".into(), Value::Integer(3)));
        assert_eq!(parse_override("a=x y").unwrap().1, Value::String("x y".into()));
        assert_eq!(parse_override("a=\"q\"").unwrap().1, Value::String("q".into()));
    }
}
