//! Python bindings: environments, agents checkpoints, chaos estimators and the
//! smoothness probes, with results returned as plain dicts and lists.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use chaosrl::agents::{softmax, ActionValues, LoadedAgent, SoftmaxPolicy};
use chaosrl::diagnostics::{
    estimate_onestep_constants, return_lipschitz_curve, w1_unsorted, CurveSettings, EnvLoop, OneStepLookahead,
    ProbeSettings, PROBE_TEMPERATURE,
};
use chaosrl::dynamics::{invariant_histogram, lyapunov_max, FlowMap};
use chaosrl::envs::{Action, EnvInstance, EnvName, EnvSpec, System};
use chaosrl::harness::{random_baseline, run_experiment, EnvConfig, RunConfig};
use chaosrl::{RngStream, StateVector};

create_exception!(pychaosrl, ChaosrlError, PyException);

fn err(e: chaosrl::Error) -> PyErr {
    ChaosrlError::new_err(format!("{}: {e}", e.kind()))
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn ser<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(v).map_err(|e| err(e.into()))?;
    to_py(py, &json)
}

fn spec_for(env: &str, m: Option<f64>, sigma: Option<f64>) -> PyResult<EnvSpec> {
    EnvConfig {
        name: env.parse::<EnvName>().map_err(err)?,
        logistic_m: m,
        obs_noise_sigma: sigma,
        max_steps: None,
        goal_tol: None,
    }
    .spec()
    .map_err(err)
}

fn state(values: &[f64], dim: usize) -> PyResult<StateVector> {
    if values.len() != dim {
        return Err(ChaosrlError::new_err(format!(
            "length_mismatch: state needs {dim} coordinates, got {}",
            values.len()
        )));
    }
    Ok(StateVector::new(values))
}

/// An episodic control task with its own random stream.
#[pyclass(module = "pychaosrl")]
struct Env {
    inner: EnvInstance,
    stream: RngStream,
}

#[pymethods]
impl Env {
    #[new]
    #[pyo3(signature = (name, m=None, sigma=None, seed=0))]
    fn new(name: &str, m: Option<f64>, sigma: Option<f64>, seed: u64) -> PyResult<Self> {
        let spec = spec_for(name, m, sigma)?;
        let mut stream = RngStream::derive(seed, 0);
        let inner = EnvInstance::new(spec, &mut stream);
        Ok(Self { inner, stream })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.spec.name()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.spec.n_actions()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.spec.obs_dim()
    }

    #[getter]
    fn state(&self) -> Vec<f64> {
        self.inner.state.to_vec()
    }

    #[getter]
    fn goal(&self) -> Vec<f64> {
        self.inner.spec.goal.to_vec()
    }

    /// Start a new episode; returns the first observation.
    #[pyo3(signature = (state=None))]
    fn reset(&mut self, state: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        match state {
            Some(s) => {
                let s = self::state(&s, self.inner.spec.state_dim())?;
                self.inner = EnvInstance::from_state(self.inner.spec.clone(), s, &mut self.stream);
            }
            None => self.inner.reset(&mut self.stream),
        }
        Ok(self.inner.obs.clone())
    }

    /// Apply a discrete action; returns `(obs, reward, done, truncated, diverged)`.
    fn step(&mut self, action: usize) -> PyResult<(Vec<f64>, f64, bool, bool, bool)> {
        if action >= self.inner.spec.n_actions() {
            return Err(ChaosrlError::new_err(format!("invalid_argument: action {action} out of range")));
        }
        let tr = self.inner.step(&Action::Discrete(action), &mut self.stream).map_err(err)?;
        Ok((tr.obs_next, tr.r, tr.done, tr.truncated, tr.diverged))
    }

    fn distance_to_goal(&self) -> f64 {
        self.inner.spec.goal_distance(&self.inner.state)
    }
}

/// A trained agent reopened from a checkpoint file.
#[pyclass(module = "pychaosrl")]
struct Agent {
    inner: LoadedAgent,
}

#[pymethods]
impl Agent {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: LoadedAgent::load(&path).map_err(err)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{:?}", self.inner.meta.agent).to_lowercase()
    }

    #[getter]
    fn env_step(&self) -> usize {
        self.inner.meta.env_step
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.meta.seed
    }

    /// Per-action values (quantile means for QRDQN).
    fn q_values(&self, obs: Vec<f64>) -> PyResult<Vec<f64>> {
        let q = self
            .inner
            .value_net()
            .ok_or_else(|| ChaosrlError::new_err("invalid_argument: PPO checkpoints have no action values"))?;
        self.check_obs(&obs)?;
        Ok(q.action_values(&obs))
    }

    /// Sorted quantile locations of one action's return distribution.
    fn quantiles(&self, obs: Vec<f64>, action: usize) -> PyResult<Vec<f64>> {
        self.check_obs(&obs)?;
        let q = self.inner.value_net();
        let n_actions = q.as_ref().map_or(0, |q| q.n_actions());
        if action >= n_actions {
            return Err(ChaosrlError::new_err(format!("invalid_argument: action {action} out of range")));
        }
        q.and_then(|q| q.quantiles(&obs, action))
            .map(|d| d.sorted())
            .ok_or_else(|| ChaosrlError::new_err("invalid_argument: not a QRDQN checkpoint"))
    }

    /// Softmax action probabilities at the given temperature.
    #[pyo3(signature = (obs, temperature=0.1))]
    fn action_probabilities(&self, obs: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
        Ok(softmax(&self.q_values(obs)?, temperature))
    }
}

impl Agent {
    fn check_obs(&self, obs: &[f64]) -> PyResult<()> {
        let want = self.inner.meta.env.obs_dim();
        if obs.len() != want {
            return Err(ChaosrlError::new_err(format!(
                "length_mismatch: observation needs {want} entries, got {}",
                obs.len()
            )));
        }
        Ok(())
    }
}

/// Largest Lyapunov exponent from a random initial state.
#[pyfunction]
#[pyo3(signature = (system="logistic", m=None, steps=100_000, d0=1e-9, seed=0))]
fn lyapunov(system: &str, m: Option<f64>, steps: usize, d0: f64, seed: u64) -> PyResult<f64> {
    let spec = spec_for(system, m, None)?;
    let s0 = spec.sample_initial(&mut RngStream::derive(seed, 0));
    let res = match spec.system {
        System::Map(map) => lyapunov_max(&map, &s0, steps, d0),
        System::Flow(f) => lyapunov_max(&FlowMap::new(f, spec.dt, spec.substeps), &s0, steps, d0),
    };
    Ok(res.map_err(err)?.lambda_max)
}

/// `(bin_edges, density)` of the logistic map's orbit.
#[pyfunction]
#[pyo3(signature = (m=4.0, bins=100, samples=100_000, burn_in=1000, seed=0))]
fn invariant_density(m: f64, bins: usize, samples: usize, burn_in: usize, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let spec = spec_for("logistic", Some(m), None)?;
    let System::Map(map) = spec.system else { unreachable!() };
    let s0 = spec.sample_initial(&mut RngStream::derive(seed, 0));
    let h = invariant_histogram(&map, &s0, burn_in, samples, bins).map_err(err)?;
    let density = h.density();
    Ok((h.bin_edges, density))
}

/// 1-Wasserstein distance between two equal-size samples.
#[pyfunction]
fn w1(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    w1_unsorted(&x, &y).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (pred, targets, kappa=1.0))]
fn quantile_huber_loss(pred: Vec<f64>, targets: Vec<f64>, kappa: f64) -> PyResult<f64> {
    if pred.is_empty() || targets.is_empty() || !(kappa > 0.0) {
        return Err(ChaosrlError::new_err("invalid_argument: need non-empty inputs and kappa > 0"));
    }
    Ok(chaosrl::agents::quantile_huber_loss(&pred, &targets, kappa))
}

#[pyfunction]
#[pyo3(signature = (env="logistic", episodes=1000, seed=0, m=None, sigma=None))]
fn baseline<'py>(
    py: Python<'py>,
    env: &str,
    episodes: usize,
    seed: u64,
    m: Option<f64>,
    sigma: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = spec_for(env, m, sigma)?;
    ser(py, &random_baseline(&spec, episodes, seed).map_err(err)?)
}

/// One-step Lipschitz constants and the return-sensitivity curve under the
/// softmax one-step-lookahead policy.
#[pyfunction]
#[pyo3(signature = (env="logistic", m=None, sigma=None, gamma=0.99, pairs=1000, anchors=64, samples=256, rollin_steps=0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn lipschitz_probe<'py>(
    py: Python<'py>,
    env: &str,
    m: Option<f64>,
    sigma: Option<f64>,
    gamma: f64,
    pairs: usize,
    anchors: usize,
    samples: usize,
    rollin_steps: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = spec_for(env, m, sigma)?;
    let policy = SoftmaxPolicy::new(OneStepLookahead::new(spec.clone()), PROBE_TEMPERATURE);
    let model = EnvLoop::new(&spec, policy);
    let settings = ProbeSettings {
        pairs,
        rollin_steps,
        ..ProbeSettings::for_spec(&spec)
    };
    let curve_settings = CurveSettings {
        anchors,
        mc_samples: samples,
        rollin_steps,
        ..CurveSettings::default()
    };
    let mut stream = RngStream::derive(seed, 0);
    let probe = estimate_onestep_constants(&model, gamma, &settings, &mut stream).map_err(err)?;
    let curve = return_lipschitz_curve(&model, gamma, &probe, &curve_settings, &mut stream).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("constants", ser(py, &probe)?)?;
    out.set_item("curve", ser(py, &curve)?)?;
    Ok(out.into_any())
}

/// Run a TOML experiment config; returns the manifest as a dict.
#[pyfunction]
#[pyo3(signature = (config, overrides=Vec::new()))]
fn run<'py>(py: Python<'py>, config: &str, overrides: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = RunConfig::parse(config, &overrides).map_err(err)?;
    let report = run_experiment(&cfg).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("output_dir", report.dir)?;
    out.set_item("manifest", ser(py, &report.manifest)?)?;
    out.set_item("aggregate", ser(py, &report.curve)?)?;
    Ok(out.into_any())
}

#[pymodule]
fn pychaosrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ChaosrlError", m.py().get_type::<ChaosrlError>())?;
    m.add_class::<Env>()?;
    m.add_class::<Agent>()?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(invariant_density, m)?)?;
    m.add_function(wrap_pyfunction!(w1, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_huber_loss, m)?)?;
    m.add_function(wrap_pyfunction!(baseline, m)?)?;
    m.add_function(wrap_pyfunction!(lipschitz_probe, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
