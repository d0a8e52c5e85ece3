//! Python bindings: configure and run simulations, and call the controller's
//! solvers directly on plain dicts keyed by K.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use promptsched::controller::{self, ControllerSettings, LoadMode};
use promptsched::metrics::{self, RunSummary as CoreSummary};
use promptsched::{Histogram, KGrid, KLevel, LatencyProfile, QualityProfile};

fn py_err(e: promptsched::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn histogram(mass: &BTreeMap<u32, f64>) -> PyResult<Histogram> {
    Histogram::new(mass.iter().map(|(&k, &m)| (KLevel(k), m))).map_err(py_err)
}

fn to_map(h: &Histogram) -> BTreeMap<u32, f64> {
    h.iter().map(|(k, m)| (k.0, m)).collect()
}

/// Simulator configuration. Built from defaults, TOML text, and
/// `key=value` overrides.
#[pyclass(module = "promptsched", skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: promptsched::Config,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (toml = None, overrides = Vec::new()))]
    fn new(toml: Option<&str>, overrides: Vec<String>) -> PyResult<Self> {
        let inner = promptsched::Config::from_toml_with_overrides(toml.unwrap_or(""), &overrides).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Returns a copy with the given `key=value` overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        let inner =
            promptsched::Config::from_toml_with_overrides(&self.inner.to_toml_string(), &overrides).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn policy(&self) -> String {
        self.inner.policy.clone()
    }

    #[getter]
    fn gpus(&self) -> u32 {
        self.inner.cluster.gpus
    }

    #[getter]
    fn levels(&self) -> Vec<u32> {
        self.inner.k_grid.levels.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(policy={:?}, seed={}, gpus={})",
            self.inner.policy, self.inner.seed, self.inner.cluster.gpus
        )
    }
}

#[pyclass(module = "promptsched", frozen, get_all)]
struct RunSummary {
    policy: String,
    seed: u64,
    mean_quality: f64,
    throughput: f64,
    slo_ratio: f64,
    max_drop: f64,
    quality_per_dollar: f64,
    load_seconds: f64,
    arrivals: usize,
    completions: usize,
}

impl From<CoreSummary> for RunSummary {
    fn from(s: CoreSummary) -> Self {
        Self {
            policy: s.policy,
            seed: s.seed,
            mean_quality: s.mean_quality,
            throughput: s.throughput,
            slo_ratio: s.slo_ratio,
            max_drop: s.max_drop,
            quality_per_dollar: s.quality_per_dollar,
            load_seconds: s.load_seconds,
            arrivals: s.arrivals,
            completions: s.completions,
        }
    }
}

#[pymethods]
impl RunSummary {
    fn __repr__(&self) -> String {
        format!(
            "RunSummary(policy={:?}, seed={}, mean_quality={:.4}, throughput={:.4}, slo_ratio={:.4})",
            self.policy, self.seed, self.mean_quality, self.throughput, self.slo_ratio
        )
    }
}

/// Completed simulation run.
#[pyclass(module = "promptsched", frozen)]
struct MetricsLog {
    inner: promptsched::MetricsLog,
    window_s: f64,
    price_per_gpu_hour: f64,
}

#[pymethods]
impl MetricsLog {
    #[getter]
    fn policy(&self) -> String {
        self.inner.policy.clone()
    }

    #[getter]
    fn arrivals(&self) -> usize {
        self.inner.arrivals
    }

    #[getter]
    fn completions(&self) -> usize {
        self.inner.records.len()
    }

    #[getter]
    fn loading_time_s(&self) -> f64 {
        self.inner.loading_time_s
    }

    #[getter]
    fn level_labels(&self) -> Vec<String> {
        self.inner.level_labels.clone()
    }

    fn summary(&self) -> PyResult<RunSummary> {
        metrics::summarize(&self.inner, self.window_s, self.price_per_gpu_hour)
            .map(RunSummary::from)
            .map_err(py_err)
    }

    /// Per-window rows of (start_s, throughput_rps, mean_quality,
    /// slo_violation_ratio, mean_batch_size, active_per_level).
    #[pyo3(signature = (window_s = None))]
    #[allow(clippy::type_complexity)]
    fn window_series(&self, window_s: Option<f64>) -> Vec<(f64, f64, Option<f64>, f64, Option<f64>, Vec<u32>)> {
        metrics::window_series(&self.inner, window_s.unwrap_or(self.window_s))
            .into_iter()
            .map(|w| {
                (
                    w.window_start_s,
                    w.throughput_rps,
                    w.mean_quality,
                    w.slo_violation_ratio,
                    w.mean_batch_size,
                    w.active,
                )
            })
            .collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

/// Generates the configured workload and runs the configured policy.
#[pyfunction]
fn simulate(py: Python<'_>, config: &Config) -> PyResult<MetricsLog> {
    let cfg = config.inner.clone();
    let inner = py.detach(|| promptsched::simulate(&cfg)).map_err(py_err)?;
    Ok(MetricsLog {
        inner,
        window_s: cfg.metrics.window_s,
        price_per_gpu_hour: cfg.cluster.price_per_gpu_hour,
    })
}

/// Instance counts and load fractions per K for arrival rate `lambda_rps`.
/// Returns `(counts, fractions, served_fraction)`.
#[pyfunction]
#[pyo3(signature = (hk, gpus, lambda_rps, levels = vec![0, 5, 10, 15, 20, 25]))]
#[allow(clippy::type_complexity)]
fn solve_assignment(
    hk: BTreeMap<u32, f64>,
    gpus: u32,
    lambda_rps: f64,
    levels: Vec<u32>,
) -> PyResult<(BTreeMap<u32, u32>, BTreeMap<u32, f64>, f64)> {
    let grid = KGrid::new(levels, 50).map_err(py_err)?;
    let a = controller::solve_assignment(
        &grid,
        gpus,
        lambda_rps,
        &histogram(&hk)?,
        &LatencyProfile::default(),
        &QualityProfile::default(),
    )
    .map_err(py_err)?;
    let counts = a.counts.iter().map(|(k, &n)| (k.0, n)).collect();
    Ok((counts, to_map(&a.fractions), a.served_fraction))
}

/// Minimum-degradation redirection of prompts with optimal-K mix `hk` onto
/// load fractions `fractions`. Returns `(plan[K][K'], degradation)`.
#[pyfunction]
#[pyo3(signature = (hk, fractions, levels = vec![0, 5, 10, 15, 20, 25]))]
#[allow(clippy::type_complexity)]
fn plan_routes(
    hk: BTreeMap<u32, f64>,
    fractions: BTreeMap<u32, f64>,
    levels: Vec<u32>,
) -> PyResult<(BTreeMap<u32, BTreeMap<u32, f64>>, f64)> {
    let grid = KGrid::new(levels, 50).map_err(py_err)?;
    let out = controller::plan_routes(
        &histogram(&hk)?,
        &histogram(&fractions)?,
        &QualityProfile::default(),
        &grid,
    )
    .map_err(py_err)?;
    let plan = out
        .plan
        .rows()
        .iter()
        .map(|(k, row)| (k.0, row.iter().map(|(j, &p)| (j.0, p)).collect()))
        .collect();
    Ok((plan, out.degradation))
}

/// One full controller decision under `config` for a given mix and load,
/// returned as a JSON object string.
#[pyfunction]
#[pyo3(signature = (config, hk, lambda_rps, high_load = false))]
fn decide(config: &Config, hk: BTreeMap<u32, f64>, lambda_rps: f64, high_load: bool) -> PyResult<String> {
    let settings = ControllerSettings::from_config(&config.inner);
    let mode = if high_load { LoadMode::High } else { LoadMode::Low };
    let d = controller::decide(&histogram(&hk)?, lambda_rps, mode, 0.0, &settings).map_err(py_err)?;
    serde_json::to_string(&d).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Mean L2 error of a `window`-sample forecast of `truth`.
#[pyfunction]
#[pyo3(signature = (truth, window, trials = 50, seed = 1, levels = vec![0, 5, 10, 15, 20, 25]))]
fn window_prediction_error(
    truth: BTreeMap<u32, f64>,
    window: usize,
    trials: usize,
    seed: u64,
    levels: Vec<u32>,
) -> PyResult<f64> {
    let grid = KGrid::new(levels, 50).map_err(py_err)?;
    controller::window_prediction_error(&histogram(&truth)?, &grid, window, trials, seed).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "promptsched")]
fn promptsched_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<MetricsLog>()?;
    m.add_class::<RunSummary>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(plan_routes, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(window_prediction_error, m)?)?;
    m.add("POLICIES", promptsched::policy::POLICY_NAMES.to_vec())?;
    Ok(())
}
