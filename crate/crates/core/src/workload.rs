//! Arrival traces and synthetic prompt streams.
//!
//! Traces are non-homogeneous Poisson processes generated by thinning a
//! homogeneous process at the peak rate. Prompts carry a synthetic embedding
//! drawn around one of a fixed set of cluster centroids; how tight a cluster
//! is decides how similar its prompts look to the cache, and therefore which
//! optimal K they end up with.

use std::f64::consts::PI;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::config::PopulationConfig;
use crate::domain::Prompt;
use crate::error::{Error, Result, Violation};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    SteadyPoisson,
    /// Sinusoid between base and peak rate (Twitter-like daily shape).
    Diurnal,
    /// Base rate with scheduled bursts.
    Bursty,
    /// Linear ramp from base to peak over the trace.
    Ramp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    pub start_s: f64,
    pub duration_s: f64,
    pub rate_rps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub kind: TraceKind,
    pub duration_s: f64,
    pub base_rate_rps: f64,
    pub peak_rate_rps: f64,
    pub period_s: f64,
    pub bursts: Vec<Burst>,
    pub seed: u64,
}

impl TraceSpec {
    pub fn steady(rate_rps: f64, duration_s: f64, seed: u64) -> Self {
        Self {
            kind: TraceKind::SteadyPoisson,
            duration_s,
            base_rate_rps: rate_rps,
            peak_rate_rps: rate_rps,
            period_s: 3600.0,
            bursts: Vec::new(),
            seed,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.duration_s > 0.0) {
            v.push(Violation::new("duration_s", "must be positive"));
        }
        if !(self.base_rate_rps >= 0.0) {
            v.push(Violation::new("base_rate_rps", "must be non-negative"));
        }
        if !(self.peak_rate_rps >= 0.0) {
            v.push(Violation::new("peak_rate_rps", "must be non-negative"));
        }
        if self.kind == TraceKind::Diurnal && self.peak_rate_rps < self.base_rate_rps {
            v.push(Violation::new("peak_rate_rps", "must be at least base_rate_rps"));
        }
        if !(self.period_s > 0.0) {
            v.push(Violation::new("period_s", "must be positive"));
        }
        for (i, b) in self.bursts.iter().enumerate() {
            if !(b.rate_rps >= 0.0) {
                v.push(Violation::new(format!("bursts[{i}].rate_rps"), "must be non-negative"));
            }
            if !(b.start_s >= 0.0 && b.duration_s > 0.0 && b.start_s + b.duration_s <= self.duration_s) {
                v.push(Violation::new(
                    format!("bursts[{i}]"),
                    "must lie within [0, duration_s]",
                ));
            }
        }
        v
    }

    /// Instantaneous arrival rate at time `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self.kind {
            TraceKind::SteadyPoisson => self.base_rate_rps,
            TraceKind::Diurnal => {
                let phase = (1.0 - (2.0 * PI * t / self.period_s).cos()) / 2.0;
                self.base_rate_rps + (self.peak_rate_rps - self.base_rate_rps) * phase
            }
            TraceKind::Bursty => self
                .bursts
                .iter()
                .rev()
                .find(|b| t >= b.start_s && t < b.start_s + b.duration_s)
                .map_or(self.base_rate_rps, |b| b.rate_rps),
            TraceKind::Ramp => {
                let frac = (t / self.duration_s).clamp(0.0, 1.0);
                self.base_rate_rps + (self.peak_rate_rps - self.base_rate_rps) * frac
            }
        }
    }

    pub fn max_rate(&self) -> f64 {
        match self.kind {
            TraceKind::SteadyPoisson => self.base_rate_rps,
            TraceKind::Diurnal | TraceKind::Ramp => self.base_rate_rps.max(self.peak_rate_rps),
            TraceKind::Bursty => self
                .bursts
                .iter()
                .map(|b| b.rate_rps)
                .fold(self.base_rate_rps, f64::max),
        }
    }
}

/// Sorted arrival timestamps in `[0, duration]`, deterministic in the seed.
pub fn gen_arrivals(spec: &TraceSpec) -> Result<Vec<f64>> {
    let violations = spec.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidConfig(violations));
    }
    let lambda_max = spec.max_rate();
    if lambda_max <= 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = rng::stream(spec.seed, rng::ARRIVALS);
    let gap = Exp::new(lambda_max).expect("positive rate");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t > spec.duration_s {
            break;
        }
        let accept: f64 = rng.random();
        if accept * lambda_max < spec.rate_at(t) {
            out.push(t);
        }
    }
    Ok(out)
}

// ── Prompt population ───────────────────────────────────────────────────────

/// From `at_s` onward, cluster membership follows `weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftPoint {
    pub at_s: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub centroids: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Per-cluster noise scale.
    pub noise: Vec<f64>,
    pub drift: Vec<DriftPoint>,
}

impl PopulationSpec {
    /// Draws `clusters` random unit centroids from the seed.
    pub fn from_config(cfg: &PopulationConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::CENTROIDS);
        let centroids = (0..cfg.clusters).map(|_| random_unit(&mut rng, cfg.dim)).collect();
        let weights = if cfg.weights.is_empty() {
            vec![1.0 / cfg.clusters as f64; cfg.clusters]
        } else {
            cfg.weights.clone()
        };
        let noise = if cfg.cluster_noise.is_empty() {
            vec![cfg.noise; cfg.clusters]
        } else {
            cfg.cluster_noise.clone()
        };
        let mut drift = cfg.drift.clone();
        drift.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
        Self {
            centroids,
            weights,
            noise,
            drift,
        }
    }

    pub fn single(centroid: Vec<f64>, noise: f64) -> Self {
        Self {
            centroids: vec![normalize(centroid)],
            weights: vec![1.0],
            noise: vec![noise],
            drift: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn weights_at(&self, t: f64) -> &[f64] {
        self.drift
            .iter()
            .rev()
            .find(|d| d.at_s <= t)
            .map_or(&self.weights, |d| &d.weights)
    }

    /// One noisy embedding around `cluster`'s centroid.
    pub fn sample_embedding(&self, cluster: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let sigma = self.noise[cluster];
        let c = &self.centroids[cluster];
        if sigma == 0.0 {
            return c.clone();
        }
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        normalize(c.iter().map(|x| x + normal.sample(rng)).collect())
    }

    pub fn sample_cluster(&self, t: f64, rng: &mut ChaCha8Rng) -> usize {
        let w = self.weights_at(t);
        WeightedIndex::new(w).expect("validated weights").sample(rng)
    }
}

/// One prompt per arrival, with embeddings filled and `optimal_k` unset.
pub fn gen_prompt_stream(arrivals: &[f64], population: &PopulationSpec, seed: u64, slo_s: f64) -> Vec<Prompt> {
    let mut rng = rng::stream(seed, rng::PROMPTS);
    arrivals
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let cluster = population.sample_cluster(t, &mut rng);
            Prompt {
                id: i as u64,
                arrival_s: t,
                embedding: population.sample_embedding(cluster, &mut rng),
                cluster,
                optimal_k: None,
                slo_s,
            }
        })
        .collect()
}

/// Rebuilds prompts from a replayed `(timestamp, cluster)` trace.
pub fn prompts_from_trace(
    rows: &[TraceRow],
    population: &PopulationSpec,
    seed: u64,
    slo_s: f64,
) -> Result<Vec<Prompt>> {
    let mut rng = rng::stream(seed, rng::PROMPTS);
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.cluster_id >= population.centroids.len() {
                return Err(Error::InvalidConfig(vec![Violation::new(
                    format!("trace[{i}].cluster_id"),
                    format!("cluster {} does not exist", r.cluster_id),
                )]));
            }
            Ok(Prompt {
                id: i as u64,
                arrival_s: r.timestamp_s,
                embedding: population.sample_embedding(r.cluster_id, &mut rng),
                cluster: r.cluster_id,
                optimal_k: None,
                slo_s,
            })
        })
        .collect()
}

// ── Trace CSV ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub timestamp_s: f64,
    pub cluster_id: usize,
}

pub fn write_trace_csv(path: &Path, prompts: &[Prompt]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in prompts {
        w.serialize(TraceRow {
            timestamp_s: p.arrival_s,
            cluster_id: p.cluster,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
    if rows.windows(2).any(|w| w[1].timestamp_s < w[0].timestamp_s) {
        return Err(Error::InvalidConfig(vec![Violation::new(
            "trace",
            "timestamps must be non-decreasing",
        )]));
    }
    Ok(rows)
}

// ── Vector helpers ──────────────────────────────────────────────────────────

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return normalize(v);
        }
    }
}
