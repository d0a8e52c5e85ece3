//! Experiment configuration: a TOML document with one section per subsystem.
//! Every field has a documented default, so an empty file is a valid config.

use serde::{Deserialize, Serialize};

use crate::cache::{Band, SimilarityBands};
use crate::domain::{grid_violation, KGrid, KLevel, LatencyProfile, QualityProfile};
use crate::error::{Error, Result, Violation};
use crate::workload::{Burst, DriftPoint, PopulationSpec, TraceKind, TraceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// One of `acs`, `clipper-ha`, `clipper-ht`, `nirvana`, `proteus`.
    pub policy: String,
    pub cluster: ClusterConfig,
    pub k_grid: GridConfig,
    pub latency: LatencyProfile,
    pub quality: QualityProfile,
    pub workload: WorkloadConfig,
    pub cache: CacheConfig,
    pub controller: ControllerConfig,
    pub dispatcher: DispatcherConfig,
    pub slo: SloConfig,
    pub baselines: BaselineConfig,
    pub metrics: MetricsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            policy: "acs".into(),
            cluster: ClusterConfig::default(),
            k_grid: GridConfig::default(),
            latency: LatencyProfile::default(),
            quality: QualityProfile::default(),
            workload: WorkloadConfig::default(),
            cache: CacheConfig::default(),
            controller: ControllerConfig::default(),
            dispatcher: DispatcherConfig::default(),
            slo: SloConfig::default(),
            baselines: BaselineConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub gpus: u32,
    pub price_per_gpu_hour: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            gpus: 8,
            price_per_gpu_hour: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub levels: Vec<u32>,
    pub total_steps: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            levels: vec![0, 5, 10, 15, 20, 25],
            total_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub kind: TraceKind,
    pub duration_s: f64,
    pub base_rate_rps: f64,
    pub peak_rate_rps: f64,
    /// Diurnal period.
    pub period_s: f64,
    pub bursts: Vec<Burst>,
    pub population: PopulationConfig,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            kind: TraceKind::SteadyPoisson,
            duration_s: 1800.0,
            base_rate_rps: 1.0,
            peak_rate_rps: 1.0,
            period_s: 3600.0,
            bursts: Vec::new(),
            population: PopulationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub clusters: usize,
    pub dim: usize,
    /// Per-component Gaussian noise added to a centroid before normalizing.
    pub noise: f64,
    /// Optional per-cluster noise override; must have `clusters` entries.
    pub cluster_noise: Vec<f64>,
    /// Cluster weights; empty means uniform.
    pub weights: Vec<f64>,
    pub drift: Vec<DriftPoint>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            clusters: 6,
            dim: 64,
            noise: 0.1,
            cluster_noise: vec![0.04, 0.06, 0.075, 0.09, 0.11, 1.0],
            weights: Vec::new(),
            drift: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub capacity: usize,
    /// Embeddings drawn from the population and inserted before the run.
    pub prewarm: usize,
    pub bands: Vec<Band>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity: 2000,
            prewarm: 500,
            bands: SimilarityBands::default().bands().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub period_s: f64,
    /// Optimal-K history length used to forecast H_K.
    pub window: usize,
    /// Trailing window for the arrival-rate estimate.
    pub lambda_window_s: f64,
    /// Utilization above which the dispatcher enters high-load mode.
    pub high_load_threshold: f64,
    pub hysteresis: f64,
    /// The assignment plans for λ / utilization_target, leaving headroom
    /// for queueing. 1.0 sizes capacity exactly to the forecast load.
    pub utilization_target: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            period_s: 60.0,
            window: 1000,
            lambda_window_s: 60.0,
            high_load_threshold: 0.8,
            hysteresis: 0.1,
            utilization_target: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispatcherConfig {
    pub batch_timeout_s: f64,
}

impl Default for DispatcherConfig {
    fn default() -> Self {
        Self { batch_timeout_s: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SloConfig {
    pub latency_s: f64,
}

impl Default for SloConfig {
    fn default() -> Self {
        Self { latency_s: 10.0 }
    }
}

/// A distinct model variant used by variant-switching baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    /// Denoising steps the variant executes (service-time equivalent).
    pub steps: u32,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Clipper-HT switches to the fastest variant above this utilization.
    pub ht_threshold: f64,
    /// Ordered from most accurate to fastest.
    pub ladder: Vec<Variant>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            ht_threshold: 0.8,
            ladder: vec![
                Variant {
                    name: "accurate".into(),
                    steps: 50,
                    quality: 1.0,
                },
                Variant {
                    name: "fast".into(),
                    steps: 25,
                    quality: 0.85,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub window_s: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { window_s: 60.0 }
    }
}

// ── Parsing and overrides ───────────────────────────────────────────────────

impl Config {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses TOML, applies `section.key=value` overrides, then validates.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| parse_error("<toml>", e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Config = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| parse_error("<toml>", e.to_string()))?;
        validate_config(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    // Derived views; callers must hold a validated config.

    pub fn grid(&self) -> KGrid {
        KGrid::new(self.k_grid.levels.iter().copied(), self.k_grid.total_steps).expect("validated grid")
    }

    pub fn bands(&self) -> SimilarityBands {
        SimilarityBands::new(self.cache.bands.clone()).expect("validated bands")
    }

    pub fn trace_spec(&self) -> TraceSpec {
        let w = &self.workload;
        TraceSpec {
            kind: w.kind,
            duration_s: w.duration_s,
            base_rate_rps: w.base_rate_rps,
            peak_rate_rps: w.peak_rate_rps,
            period_s: w.period_s,
            bursts: w.bursts.clone(),
            seed: self.seed,
        }
    }

    pub fn population(&self) -> PopulationSpec {
        PopulationSpec::from_config(&self.workload.population, self.seed)
    }
}

fn parse_error(path: &str, msg: String) -> Error {
    Error::InvalidConfig(vec![Violation::new(path, msg)])
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| parse_error(spec, "override must be key=value".into()))?;
    let path = path.trim();
    let raw = raw.trim();
    // Parse the value as a TOML expression; fall back to a bare string.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| parse_error(path, "empty override key".into()))?;
    let mut table = doc;
    for key in keys {
        let entry = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| parse_error(path, format!("{key} is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

// ── Validation ──────────────────────────────────────────────────────────────

/// Checks every invariant of the configuration and its derived values,
/// returning the (already defaulted) config or the full list of violations.
pub fn validate_config(cfg: Config) -> Result<Config> {
    let mut v = Vec::new();
    let mut bad = |path: &str, msg: String| v.push(Violation::new(path, msg));

    if crate::policy::POLICY_NAMES.iter().all(|p| *p != cfg.policy) {
        bad("policy", format!("unknown policy {:?}", cfg.policy));
    }
    if cfg.cluster.gpus == 0 {
        bad("cluster.gpus", "must be at least 1".into());
    }
    if !(cfg.cluster.price_per_gpu_hour > 0.0) {
        bad("cluster.price_per_gpu_hour", "must be positive".into());
    }

    let levels: Vec<KLevel> = cfg.k_grid.levels.iter().copied().map(KLevel).collect();
    let grid_ok = match grid_violation(&levels, cfg.k_grid.total_steps) {
        Some(msg) => {
            bad("k_grid.levels", msg);
            false
        }
        None => true,
    };

    let l = &cfg.latency;
    if !(l.per_step_s > 0.0) {
        bad("latency.per_step_s", "must be positive".into());
    }
    if !(0.0..=1.0).contains(&l.batch_marginal) {
        bad("latency.batch_marginal", "must lie in [0, 1]".into());
    }
    if l.max_batch == 0 {
        bad("latency.max_batch", "must be at least 1".into());
    }
    if !(l.load_overhead_s >= 0.0) {
        bad("latency.load_overhead_s", "must be non-negative".into());
    }

    let q = &cfg.quality;
    if !(q.degradation_per_step >= 0.0) {
        bad("quality.degradation_per_step", "must be non-negative".into());
    }
    if !(0.0..=1.0).contains(&q.floor) {
        bad("quality.floor", "must lie in [0, 1]".into());
    }
    let mut prev = (0u32, 1.0f64);
    for (i, p) in q.table.iter().enumerate() {
        if p.over_skip <= prev.0 && i > 0 || p.over_skip == 0 {
            bad(
                &format!("quality.table[{i}]"),
                "over_skip must be strictly increasing and positive".into(),
            );
        }
        if !(0.0..=1.0).contains(&p.quality) || p.quality > prev.1 {
            bad(
                &format!("quality.table[{i}]"),
                "quality must be non-increasing within [0, 1]".into(),
            );
        }
        prev = (p.over_skip, p.quality);
    }

    let w = &cfg.workload;
    let trace = TraceSpec {
        kind: w.kind,
        duration_s: w.duration_s,
        base_rate_rps: w.base_rate_rps,
        peak_rate_rps: w.peak_rate_rps,
        period_s: w.period_s,
        bursts: w.bursts.clone(),
        seed: cfg.seed,
    };
    for viol in trace.violations() {
        v_push(&mut v, "workload", viol);
    }
    for viol in population_violations(&w.population) {
        v_push(&mut v, "workload.population", viol);
    }

    match SimilarityBands::new(cfg.cache.bands.clone()) {
        Ok(bands) => {
            if grid_ok {
                for (i, b) in bands.bands().iter().enumerate() {
                    if !levels.contains(&b.k) {
                        v.push(Violation::new(
                            format!("cache.bands[{i}].k"),
                            format!("K={} is not in the grid", b.k),
                        ));
                    }
                }
            }
        }
        Err(e) => v.push(Violation::new("cache.bands", e.to_string())),
    }
    if cfg.cache.capacity == 0 {
        v.push(Violation::new("cache.capacity", "must be at least 1"));
    }

    let c = &cfg.controller;
    if !(c.period_s > 0.0) {
        v.push(Violation::new("controller.period_s", "must be positive"));
    }
    if c.window == 0 {
        v.push(Violation::new("controller.window", "must be at least 1"));
    }
    if !(c.lambda_window_s > 0.0) {
        v.push(Violation::new("controller.lambda_window_s", "must be positive"));
    }
    if !(c.high_load_threshold > 0.0) {
        v.push(Violation::new("controller.high_load_threshold", "must be positive"));
    }
    if !(c.utilization_target > 0.0 && c.utilization_target <= 1.0) {
        v.push(Violation::new("controller.utilization_target", "must be in (0, 1]"));
    }
    if !(c.hysteresis >= 0.0 && c.hysteresis < c.high_load_threshold) {
        v.push(Violation::new(
            "controller.hysteresis",
            "must be non-negative and below the threshold",
        ));
    }
    if !(cfg.dispatcher.batch_timeout_s > 0.0) {
        v.push(Violation::new("dispatcher.batch_timeout_s", "must be positive"));
    }
    if !(cfg.slo.latency_s > 0.0) {
        v.push(Violation::new("slo.latency_s", "must be positive"));
    }
    if !(cfg.metrics.window_s > 0.0) {
        v.push(Violation::new("metrics.window_s", "must be positive"));
    }

    let b = &cfg.baselines;
    if !(b.ht_threshold > 0.0) {
        v.push(Violation::new("baselines.ht_threshold", "must be positive"));
    }
    if b.ladder.is_empty() {
        v.push(Violation::new("baselines.ladder", "needs at least one variant"));
    }
    for (i, var) in b.ladder.iter().enumerate() {
        if var.steps == 0 || var.steps > cfg.k_grid.total_steps {
            v.push(Violation::new(
                format!("baselines.ladder[{i}].steps"),
                "must lie in [1, total_steps]",
            ));
        }
        if !(0.0..=1.0).contains(&var.quality) {
            v.push(Violation::new(
                format!("baselines.ladder[{i}].quality"),
                "must lie in [0, 1]",
            ));
        }
        if i > 0 {
            let prev = &b.ladder[i - 1];
            if var.steps >= prev.steps || var.quality > prev.quality {
                v.push(Violation::new(
                    format!("baselines.ladder[{i}]"),
                    "variants must get faster with non-increasing quality",
                ));
            }
        }
    }

    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(v))
    }
}

fn v_push(v: &mut Vec<Violation>, prefix: &str, inner: Violation) {
    v.push(Violation::new(format!("{prefix}.{}", inner.path), inner.message));
}

fn population_violations(p: &PopulationConfig) -> Vec<Violation> {
    let mut v = Vec::new();
    if p.clusters == 0 {
        v.push(Violation::new("clusters", "must be at least 1"));
    }
    if p.dim < 2 {
        v.push(Violation::new("dim", "must be at least 2"));
    }
    if !(p.noise >= 0.0) {
        v.push(Violation::new("noise", "must be non-negative"));
    }
    if !p.cluster_noise.is_empty() && p.cluster_noise.len() != p.clusters {
        v.push(Violation::new("cluster_noise", "needs one entry per cluster"));
    }
    if p.cluster_noise.iter().any(|n| !(*n >= 0.0)) {
        v.push(Violation::new("cluster_noise", "must be non-negative"));
    }
    let weights_ok =
        |w: &[f64]| w.len() == p.clusters && w.iter().all(|x| *x >= 0.0) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if !p.weights.is_empty() && !weights_ok(&p.weights) {
        v.push(Violation::new(
            "weights",
            "need one non-negative weight per cluster summing to 1",
        ));
    }
    for (i, d) in p.drift.iter().enumerate() {
        if !weights_ok(&d.weights) {
            v.push(Violation::new(
                format!("drift[{i}].weights"),
                "need one non-negative weight per cluster summing to 1",
            ));
        }
        if !(d.at_s >= 0.0) {
            v.push(Violation::new(format!("drift[{i}].at_s"), "must be non-negative"));
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_defaults() {
        let cfg = Config::from_toml_str("").unwrap();
        assert_eq!(cfg.k_grid.total_steps, 50);
        assert_eq!(cfg.latency.per_step_s, 0.1);
        assert_eq!(cfg.slo.latency_s, 10.0);
        assert_eq!(cfg.latency.load_overhead_s, 20.0);
        assert_eq!(cfg.controller.window, 1000);
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn grid_without_vanilla_is_reported() {
        let err = Config::from_toml_str("[k_grid]\nlevels = [5, 25]\n").unwrap_err();
        let v = err.violations().unwrap();
        assert!(v
            .iter()
            .any(|x| x.path == "k_grid.levels" && x.message.contains("level 0 required")));
    }

    #[test]
    fn all_violations_are_collected() {
        let text = r#"
            policy = "bogus"
            [latency]
            per_step_s = -1.0
            max_batch = 0
            [slo]
            latency_s = 0.0
        "#;
        let err = Config::from_toml_str(text).unwrap_err();
        let paths: Vec<_> = err.violations().unwrap().iter().map(|v| v.path.clone()).collect();
        for p in ["policy", "latency.per_step_s", "latency.max_batch", "slo.latency_s"] {
            assert!(paths.iter().any(|x| x == p), "missing {p} in {paths:?}");
        }
    }

    #[test]
    fn bands_must_target_grid_levels() {
        let text = "[k_grid]\nlevels = [0, 25]\n";
        let err = Config::from_toml_str(text).unwrap_err();
        assert!(err
            .violations()
            .unwrap()
            .iter()
            .any(|v| v.path.starts_with("cache.bands")));
        let ok = "[k_grid]\nlevels = [0, 25]\n[cache]\nbands = [{ min_similarity = 0.9, k = 25 }]\n";
        assert!(Config::from_toml_str(ok).is_ok());
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let cfg = Config::from_toml_with_overrides(
            "",
            &[
                "cluster.gpus=16".into(),
                "policy=nirvana".into(),
                "workload.kind=\"bursty\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.cluster.gpus, 16);
        assert_eq!(cfg.policy, "nirvana");
        assert_eq!(cfg.workload.kind, TraceKind::Bursty);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml_str("[cluster]\ngpu = 4\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = Config::default();
        let back = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }
}
