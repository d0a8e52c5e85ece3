//! Completion accounting and evaluation metrics. Everything here is a pure
//! function of a [`MetricsLog`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{Histogram, KGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_id: u64,
    pub arrival_s: f64,
    pub completion_s: f64,
    /// Steps skipped by the executed model (variants map to their step gap).
    pub executed_k: u32,
    /// Executed level or variant label.
    pub executed: String,
    pub optimal_k: u32,
    pub quality: f64,
    pub batch_size: usize,
    pub worker: usize,
}

impl CompletionRecord {
    pub fn latency_s(&self) -> f64 {
        self.completion_s - self.arrival_s
    }
}

/// Instances per level label at a controller tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancySample {
    pub time_s: f64,
    pub counts: Vec<u32>,
    pub high_load: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub policy: String,
    pub seed: u64,
    pub duration_s: f64,
    pub instances: u32,
    pub slo_s: f64,
    pub level_labels: Vec<String>,
    pub arrivals: usize,
    pub records: Vec<CompletionRecord>,
    pub occupancy: Vec<OccupancySample>,
    /// Cumulative seconds instances spent loading models.
    pub loading_time_s: f64,
    pub variant_switches: u64,
    /// Zero-cost K changes under approximate caching.
    pub k_switches: u64,
    pub busy_time_s: Vec<f64>,
}

impl MetricsLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log is serializable")
    }

    /// Records completed inside the trace interval.
    pub fn in_trace(&self) -> impl Iterator<Item = &CompletionRecord> {
        self.records.iter().filter(move |r| r.completion_s <= self.duration_s)
    }
}

// ── Scalar metrics ──────────────────────────────────────────────────────────

/// Share of requests whose end-to-end latency exceeds `slo_s`.
pub fn slo_violation_ratio<'a>(records: impl IntoIterator<Item = &'a CompletionRecord>, slo_s: f64) -> f64 {
    let (mut late, mut n) = (0usize, 0usize);
    for r in records {
        n += 1;
        if r.latency_s() > slo_s {
            late += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        late as f64 / n as f64
    }
}

/// Mean quality, or `None` for an empty set.
pub fn mean_quality<'a>(records: impl IntoIterator<Item = &'a CompletionRecord>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in records {
        sum += r.quality;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Completions per second in consecutive windows over the trace interval.
pub fn throughput(log: &MetricsLog, window_s: f64) -> Vec<f64> {
    assert!(window_s > 0.0, "window must be positive");
    let n = window_count(log.duration_s, window_s);
    let mut counts = vec![0usize; n];
    for r in log.in_trace() {
        if let Some(i) = window_index(r.completion_s, window_s, n) {
            counts[i] += 1;
        }
    }
    counts.iter().map(|&c| c as f64 / window_s).collect()
}

/// Largest per-window quality shortfall from 1. Windows without completions
/// are skipped.
pub fn max_quality_drop(window_means: &[Option<f64>]) -> f64 {
    window_means.iter().flatten().map(|q| 1.0 - q).fold(0.0, f64::max)
}

/// Total delivered quality per dollar of cluster time.
pub fn quality_per_dollar<'a>(
    records: impl IntoIterator<Item = &'a CompletionRecord>,
    instances: u32,
    duration_s: f64,
    price_per_gpu_hour: f64,
) -> Result<f64> {
    if !(duration_s > 0.0) || !(price_per_gpu_hour > 0.0) || instances == 0 {
        return Err(Error::Infeasible(
            "cost needs positive duration, price and instances".into(),
        ));
    }
    let quality: f64 = records.into_iter().map(|r| r.quality).sum();
    Ok(quality / (instances as f64 * duration_s / 3600.0 * price_per_gpu_hour))
}

/// Divides every value by `values[reference]`.
pub fn normalize_relative(values: &[f64], reference: usize) -> Result<Vec<f64>> {
    let base = *values
        .get(reference)
        .ok_or_else(|| Error::Infeasible("reference run out of range".into()))?;
    if base == 0.0 {
        return Err(Error::Infeasible("reference run has zero quality-per-dollar".into()));
    }
    Ok(values.iter().map(|v| v / base).collect())
}

/// L2 distance between two histograms over the same grid.
pub fn l2_hist_error(predicted: &Histogram, realized: &Histogram, grid: &KGrid) -> Result<f64> {
    if !predicted.keys_within(grid) || !realized.keys_within(grid) {
        return Err(Error::InvalidHistogram("histograms are not over the same grid".into()));
    }
    Ok(grid
        .levels()
        .iter()
        .map(|&k| (predicted.get(k) - realized.get(k)).powi(2))
        .sum::<f64>()
        .sqrt())
}

// ── Window series ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowStats {
    pub window_start_s: f64,
    pub throughput_rps: f64,
    pub mean_quality: Option<f64>,
    pub slo_violation_ratio: f64,
    pub mean_batch_size: Option<f64>,
    pub active: Vec<u32>,
    pub high_load: bool,
}

fn window_count(duration_s: f64, window_s: f64) -> usize {
    ((duration_s / window_s).ceil() as usize).max(1)
}

fn window_index(t: f64, window_s: f64, n: usize) -> Option<usize> {
    if t < 0.0 {
        return None;
    }
    Some(((t / window_s).floor() as usize).min(n - 1))
}

/// Per-window statistics keyed by completion time.
pub fn window_series(log: &MetricsLog, window_s: f64) -> Vec<WindowStats> {
    let n = window_count(log.duration_s, window_s);
    let mut buckets: Vec<Vec<&CompletionRecord>> = vec![Vec::new(); n];
    for r in log.in_trace() {
        if let Some(i) = window_index(r.completion_s, window_s, n) {
            buckets[i].push(r);
        }
    }
    let throughput = throughput(log, window_s);
    buckets
        .iter()
        .enumerate()
        .map(|(i, recs)| {
            let start = i as f64 * window_s;
            // Each batch contributes batch_size records, so Σ 1/b counts batches.
            let batches: f64 = recs.iter().map(|r| 1.0 / r.batch_size as f64).sum();
            let sample = log
                .occupancy
                .iter()
                .rev()
                .find(|s| s.time_s <= start + 1e-9)
                .or(log.occupancy.first());
            WindowStats {
                window_start_s: start,
                throughput_rps: throughput[i],
                mean_quality: mean_quality(recs.iter().copied()),
                slo_violation_ratio: slo_violation_ratio(recs.iter().copied(), log.slo_s),
                mean_batch_size: (batches > 0.0).then(|| recs.len() as f64 / batches),
                active: sample.map_or_else(|| vec![0; log.level_labels.len()], |s| s.counts.clone()),
                high_load: sample.is_some_and(|s| s.high_load),
            }
        })
        .collect()
}

// ── Run summary ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub mean_quality: f64,
    pub throughput: f64,
    pub slo_ratio: f64,
    pub max_drop: f64,
    pub quality_per_dollar: f64,
    /// Filled in by comparisons; 1.0 for a standalone run.
    pub quality_per_dollar_rel: f64,
    pub load_seconds: f64,
    pub arrivals: usize,
    pub completions: usize,
}

pub fn summarize(log: &MetricsLog, window_s: f64, price_per_gpu_hour: f64) -> Result<RunSummary> {
    let series = window_series(log, window_s);
    let means: Vec<Option<f64>> = series.iter().map(|w| w.mean_quality).collect();
    let delivered = log.in_trace().count();
    Ok(RunSummary {
        policy: log.policy.clone(),
        seed: log.seed,
        mean_quality: mean_quality(&log.records).unwrap_or(f64::NAN),
        throughput: delivered as f64 / log.duration_s,
        slo_ratio: slo_violation_ratio(&log.records, log.slo_s),
        max_drop: max_quality_drop(&means),
        quality_per_dollar: quality_per_dollar(log.in_trace(), log.instances, log.duration_s, price_per_gpu_hour)?,
        quality_per_dollar_rel: 1.0,
        load_seconds: log.loading_time_s,
        arrivals: log.arrivals,
        completions: log.records.len(),
    })
}

// ── CSV output ──────────────────────────────────────────────────────────────

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_window_csv<W: Write>(out: W, labels: &[String], series: &[WindowStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "window_start_s".to_string(),
        "throughput_rps".into(),
        "mean_quality".into(),
        "slo_violation_ratio".into(),
        "mean_batch_size".into(),
        "high_load".into(),
    ];
    header.extend(labels.iter().map(|l| format!("active_{l}")));
    w.write_record(&header)?;
    for s in series {
        let mut row = vec![
            format!("{:.1}", s.window_start_s),
            format!("{:.6}", s.throughput_rps),
            opt(s.mean_quality),
            format!("{:.6}", s.slo_violation_ratio),
            opt(s.mean_batch_size),
            (s.high_load as u8).to_string(),
        ];
        row.extend(s.active.iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "policy",
    "mean_quality",
    "throughput",
    "slo_ratio",
    "max_drop",
    "quality_per_dollar_rel",
    "load_seconds",
];

pub fn summary_row(s: &RunSummary) -> Vec<String> {
    vec![
        s.policy.clone(),
        format!("{:.6}", s.mean_quality),
        format!("{:.6}", s.throughput),
        format!("{:.6}", s.slo_ratio),
        format!("{:.6}", s.max_drop),
        format!("{:.6}", s.quality_per_dollar_rel),
        format!("{:.3}", s.load_seconds),
    ]
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in rows {
        w.write_record(summary_row(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_csv<W: Write>(out: W, records: &[CompletionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
