//! Core value types shared by every module: approximation levels, histograms
//! over them, route plans, and the latency and quality profiles that turn a
//! level choice into service time and output quality.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a histogram or plan row sums to one.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Number of initial denoising steps skipped by approximate caching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KLevel(pub u32);

impl KLevel {
    pub const VANILLA: KLevel = KLevel(0);

    pub fn steps(self) -> u32 {
        self.0
    }
}

impl fmt::Display for KLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for KLevel {
    fn from(k: u32) -> Self {
        KLevel(k)
    }
}

// ── KGrid ───────────────────────────────────────────────────────────────────

/// The discrete set of approximation levels instances may run at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KGrid {
    levels: Vec<KLevel>,
    total_steps: u32,
}

impl KGrid {
    pub fn new(levels: impl IntoIterator<Item = u32>, total_steps: u32) -> Result<Self> {
        let levels: Vec<KLevel> = levels.into_iter().map(KLevel).collect();
        if let Some(msg) = grid_violation(&levels, total_steps) {
            return Err(Error::InvalidGrid(msg));
        }
        Ok(Self { levels, total_steps })
    }

    pub fn levels(&self) -> &[KLevel] {
        &self.levels
    }

    pub fn total_steps(&self) -> u32 {
        self.total_steps
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn contains(&self, k: KLevel) -> bool {
        self.levels.binary_search(&k).is_ok()
    }

    pub fn index_of(&self, k: KLevel) -> Option<usize> {
        self.levels.binary_search(&k).ok()
    }

    pub fn max_level(&self) -> KLevel {
        *self.levels.last().expect("grid is never empty")
    }

    /// Denoising steps actually executed at level `k`.
    pub fn remaining_steps(&self, k: KLevel) -> u32 {
        self.total_steps.saturating_sub(k.0)
    }
}

pub(crate) fn grid_violation(levels: &[KLevel], total_steps: u32) -> Option<String> {
    if levels.is_empty() {
        return Some("level 0 required (grid is empty)".into());
    }
    if levels[0] != KLevel::VANILLA {
        return Some("level 0 required".into());
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Some("levels must be strictly increasing".into());
    }
    if let Some(k) = levels.iter().find(|k| k.0 >= total_steps) {
        return Some(format!("level {k} must be below total_steps {total_steps}"));
    }
    None
}

// ── Histogram ───────────────────────────────────────────────────────────────

/// Probability mass over K levels. Holds both the optimal-K forecast and the
/// per-level load fractions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Histogram {
    mass: BTreeMap<KLevel, f64>,
}

impl Histogram {
    /// Builds a normalized histogram. Masses must be non-negative and sum to
    /// one within [`MASS_TOLERANCE`].
    pub fn new(mass: impl IntoIterator<Item = (KLevel, f64)>) -> Result<Self> {
        let h = Self::collect(mass)?;
        let total = h.total();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidHistogram(format!(
                "mass sums to {}",
                round_for_display(total)
            )));
        }
        Ok(h)
    }

    /// A histogram whose total may fall short of one (e.g. shed load).
    pub fn partial(mass: impl IntoIterator<Item = (KLevel, f64)>) -> Result<Self> {
        let h = Self::collect(mass)?;
        if h.total() > 1.0 + MASS_TOLERANCE {
            return Err(Error::InvalidHistogram(format!(
                "partial mass sums to {}",
                round_for_display(h.total())
            )));
        }
        Ok(h)
    }

    fn collect(mass: impl IntoIterator<Item = (KLevel, f64)>) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (k, m) in mass {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::InvalidHistogram(format!("mass at K={k} is {m}")));
            }
            *out.entry(k).or_insert(0.0) += m;
        }
        Ok(Self { mass: out })
    }

    pub fn point(k: KLevel) -> Self {
        Self {
            mass: BTreeMap::from([(k, 1.0)]),
        }
    }

    pub fn uniform(grid: &KGrid) -> Self {
        let m = 1.0 / grid.len() as f64;
        Self {
            mass: grid.levels().iter().map(|&k| (k, m)).collect(),
        }
    }

    /// Normalized counts. Empty input yields `None`.
    pub fn from_counts(counts: impl IntoIterator<Item = (KLevel, u64)>) -> Option<Self> {
        let counts: Vec<(KLevel, u64)> = counts.into_iter().collect();
        let total: u64 = counts.iter().map(|(_, c)| c).sum();
        if total == 0 {
            return None;
        }
        let mut mass = BTreeMap::new();
        for (k, c) in counts {
            *mass.entry(k).or_insert(0.0) += c as f64 / total as f64;
        }
        Some(Self { mass })
    }

    pub fn get(&self, k: KLevel) -> f64 {
        self.mass.get(&k).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (KLevel, f64)> + '_ {
        self.mass.iter().map(|(&k, &m)| (k, m))
    }

    pub fn support(&self) -> impl Iterator<Item = KLevel> + '_ {
        self.mass.iter().filter(|(_, &m)| m > 0.0).map(|(&k, _)| k)
    }

    /// Dense vector aligned with `grid.levels()`.
    pub fn to_dense(&self, grid: &KGrid) -> Vec<f64> {
        grid.levels().iter().map(|&k| self.get(k)).collect()
    }

    pub fn keys_within(&self, grid: &KGrid) -> bool {
        self.mass.keys().all(|&k| grid.contains(k))
    }
}

fn round_for_display(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

// ── RoutePlan ───────────────────────────────────────────────────────────────

/// Redirection probabilities P(K' | optimal K), one stochastic row per level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutePlan {
    rows: BTreeMap<KLevel, BTreeMap<KLevel, f64>>,
}

impl RoutePlan {
    pub fn from_rows(rows: BTreeMap<KLevel, BTreeMap<KLevel, f64>>) -> Result<Self> {
        for (k, row) in &rows {
            if row.values().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::InvalidHistogram(format!("plan row {k} has a negative entry")));
            }
            let s: f64 = row.values().sum();
            if (s - 1.0).abs() > MASS_TOLERANCE {
                return Err(Error::InvalidHistogram(format!("plan row {k} sums to {s}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(grid: &KGrid) -> Self {
        Self {
            rows: grid.levels().iter().map(|&k| (k, BTreeMap::from([(k, 1.0)]))).collect(),
        }
    }

    pub fn row(&self, optimal_k: KLevel) -> Option<&BTreeMap<KLevel, f64>> {
        self.rows.get(&optimal_k)
    }

    pub fn rows(&self) -> &BTreeMap<KLevel, BTreeMap<KLevel, f64>> {
        &self.rows
    }

    pub fn prob(&self, optimal_k: KLevel, target: KLevel) -> f64 {
        self.rows
            .get(&optimal_k)
            .and_then(|r| r.get(&target))
            .copied()
            .unwrap_or(0.0)
    }

    /// Σ_i H(K_i)·P(K'|K_i) for every target level.
    pub fn induced_marginal(&self, hk: &Histogram) -> BTreeMap<KLevel, f64> {
        let mut out = BTreeMap::new();
        for (k, row) in &self.rows {
            let h = hk.get(*k);
            for (t, p) in row {
                *out.entry(*t).or_insert(0.0) += h * p;
            }
        }
        out
    }

    /// Expected quality degradation Σ H(K_i)·P(K'_j|K_i)·D(K'_j,K_i) over
    /// downgrade moves only.
    pub fn degradation(&self, hk: &Histogram, quality: &QualityProfile) -> f64 {
        let mut total = 0.0;
        for (k, row) in &self.rows {
            let h = hk.get(*k);
            for (t, p) in row {
                if t > k {
                    total += h * p * quality.degradation(*t, *k);
                }
            }
        }
        total
    }
}

// ── Profiles ────────────────────────────────────────────────────────────────

/// Per-instance latency model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyProfile {
    /// Seconds per denoising step at batch size one.
    pub per_step_s: f64,
    /// Fractional cost of each additional batch item.
    pub batch_marginal: f64,
    pub max_batch: usize,
    /// Model load/unload delay paid by variant-switching systems.
    pub load_overhead_s: f64,
}

impl Default for LatencyProfile {
    fn default() -> Self {
        Self {
            per_step_s: 0.1,
            batch_marginal: 0.3,
            max_batch: 4,
            load_overhead_s: 20.0,
        }
    }
}

impl LatencyProfile {
    /// Wall time of a batch of `batch` items executing `steps` denoising steps.
    pub fn batch_time(&self, steps: u32, batch: usize) -> f64 {
        let extra = batch.saturating_sub(1) as f64;
        steps as f64 * self.per_step_s * (1.0 + self.batch_marginal * extra)
    }

    /// Throughput of one instance running full batches, in requests/s.
    pub fn max_batch_rate(&self, steps: u32) -> f64 {
        self.max_batch as f64 / self.batch_time(steps, self.max_batch)
    }

    /// Throughput of one instance serving one request at a time.
    pub fn unbatched_rate(&self, steps: u32) -> f64 {
        1.0 / self.batch_time(steps, 1)
    }
}

/// A point of a table-driven degradation curve: quality after over-skipping
/// `over_skip` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityPoint {
    pub over_skip: u32,
    pub quality: f64,
}

/// Output quality as a function of how far the executed level overshoots the
/// prompt's optimal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityProfile {
    pub degradation_per_step: f64,
    pub floor: f64,
    /// Optional piecewise-linear override; (0, 1.0) is implied. Beyond the
    /// last point quality stays at that point's value.
    pub table: Vec<QualityPoint>,
}

impl Default for QualityProfile {
    fn default() -> Self {
        Self {
            degradation_per_step: 0.006,
            floor: 0.0,
            table: Vec::new(),
        }
    }
}

impl QualityProfile {
    /// Quality of executing at `executed` a prompt whose optimal level is
    /// `optimal`. Always 1 when no steps are over-skipped.
    pub fn quality(&self, executed: KLevel, optimal: KLevel) -> f64 {
        if executed <= optimal {
            return 1.0;
        }
        let over = executed.0 - optimal.0;
        let raw = if self.table.is_empty() {
            1.0 - self.degradation_per_step * over as f64
        } else {
            self.table_lookup(over)
        };
        raw.max(self.floor)
    }

    /// D(K', K): quality lost by the move; zero for upgrades.
    pub fn degradation(&self, executed: KLevel, optimal: KLevel) -> f64 {
        1.0 - self.quality(executed, optimal)
    }

    fn table_lookup(&self, over: u32) -> f64 {
        let mut prev = QualityPoint {
            over_skip: 0,
            quality: 1.0,
        };
        for p in &self.table {
            if over <= p.over_skip {
                let span = (p.over_skip - prev.over_skip) as f64;
                if span == 0.0 {
                    return p.quality;
                }
                let t = (over - prev.over_skip) as f64 / span;
                return prev.quality + t * (p.quality - prev.quality);
            }
            prev = *p;
        }
        prev.quality
    }
}

// ── Requests and assignments ────────────────────────────────────────────────

/// A text-to-image request. `embedding` is a synthetic unit vector standing in
/// for the prompt's text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: u64,
    pub arrival_s: f64,
    pub embedding: Vec<f64>,
    /// Population cluster the prompt was drawn from.
    pub cluster: usize,
    pub optimal_k: Option<KLevel>,
    pub slo_s: f64,
}

/// Instance counts per level and the load fractions routed to each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub counts: BTreeMap<KLevel, u32>,
    /// F(K), normalized over all admitted load.
    pub fractions: Histogram,
    /// Share of the offered load the assignment can serve within capacity.
    pub served_fraction: f64,
}

impl ClusterAssignment {
    pub fn total_instances(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn count(&self, k: KLevel) -> u32 {
        self.counts.get(&k).copied().unwrap_or(0)
    }
}
