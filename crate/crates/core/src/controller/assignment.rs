//! Instance-to-level assignment and per-level load fractions.
//!
//! Given N instances and offered load λ, choose integer counts n_K and load
//! fractions F(K) with F(K)·λ ≤ n_K·rate(K). The objective is lexicographic:
//!
//! 1. maximize the served fraction Σ F(K) (at most 1),
//! 2. maximize expected quality Σ F(K)·a(K),
//! 3. minimize Σ n_K·K (spare instances stay at the accurate end),
//! 4. prefer the lexicographically largest count vector.
//!
//! For fixed counts the optimal F fills levels in order of decreasing a(K)
//! up to capacity. The counts are found by depth-first branch and bound.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::domain::{ClusterAssignment, Histogram, KGrid, LatencyProfile, QualityProfile};
use crate::error::{Error, Result};

/// Two objective values closer than this are treated as equal.
pub const TIE_EPS: f64 = 1e-12;

/// One level the solver may place instances on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelOption {
    /// Per-instance throughput at full batches, requests/s.
    pub rate: f64,
    /// a(K): expected quality of a request of the forecast mix served here.
    pub value: f64,
    /// Tie-break weight; lower is preferred among otherwise equal plans.
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub counts: Vec<u32>,
    /// Raw load fraction per level; sums to `served`.
    pub load: Vec<f64>,
    pub served: f64,
    pub quality: f64,
}

impl Allocation {
    pub fn cost(&self, options: &[LevelOption]) -> u64 {
        self.counts
            .iter()
            .zip(options)
            .map(|(&n, o)| n as u64 * o.weight as u64)
            .sum()
    }
}

/// Fraction of the offered load that `count` instances at `rate` can absorb.
pub fn capacity_share(count: u32, rate: f64, lambda: f64) -> f64 {
    if count == 0 {
        0.0
    } else if lambda <= 0.0 {
        f64::INFINITY
    } else {
        count as f64 * rate / lambda
    }
}

/// The optimal load split for fixed counts.
pub fn fill(options: &[LevelOption], counts: &[u32], lambda: f64) -> Allocation {
    let mut served: f64 = 0.0;
    let mut quality = 0.0;
    let mut load = Vec::with_capacity(options.len());
    for (o, &n) in options.iter().zip(counts) {
        let f = capacity_share(n, o.rate, lambda).min((1.0 - served).max(0.0));
        served += f;
        quality += f * o.value;
        load.push(f);
    }
    Allocation {
        counts: counts.to_vec(),
        load,
        served,
        quality,
    }
}

fn cmp_tol(a: f64, b: f64) -> Ordering {
    if a > b + TIE_EPS {
        Ordering::Greater
    } else if a < b - TIE_EPS {
        Ordering::Less
    } else {
        Ordering::Equal
    }
}

/// Lexicographic comparison of (served, quality, -cost).
fn compare(served: f64, quality: f64, cost: u64, best: &(f64, f64, u64)) -> Ordering {
    cmp_tol(served, best.0)
        .then(cmp_tol(quality, best.1))
        .then(best.2.cmp(&cost))
}

struct Search<'a> {
    options: &'a [LevelOption],
    lambda: f64,
    max_rate_from: Vec<f64>,
    min_weight_from: Vec<u32>,
    counts: Vec<u32>,
    best: Option<((f64, f64, u64), Vec<u32>)>,
}

impl Search<'_> {
    fn visit(&mut self, level: usize, left: u32, served: f64, quality: f64, cost: u64) {
        let o = self.options[level];
        let last = level + 1 == self.options.len();
        let range: Box<dyn Iterator<Item = u32>> = if last {
            Box::new(std::iter::once(left))
        } else {
            Box::new((0..=left).rev())
        };
        for n in range {
            self.counts[level] = n;
            let f = capacity_share(n, o.rate, self.lambda).min((1.0 - served).max(0.0));
            let s = served + f;
            let q = quality + f * o.value;
            let c = cost + n as u64 * o.weight as u64;
            let rest = left - n;
            if last {
                let better = match &self.best {
                    None => true,
                    Some((key, _)) => compare(s, q, c, key) == Ordering::Greater,
                };
                if better {
                    self.best = Some(((s, q, c), self.counts.clone()));
                }
                continue;
            }
            if let Some((key, _)) = &self.best {
                let next = level + 1;
                let extra = capacity_share(rest, self.max_rate_from[next], self.lambda).min((1.0 - s).max(0.0));
                let served_ub = s + extra;
                let quality_ub = q + extra * self.options[next].value;
                let cost_lb = c + rest as u64 * self.min_weight_from[next] as u64;
                if compare(served_ub, quality_ub, cost_lb, key) != Ordering::Greater {
                    continue;
                }
            }
            self.visit(level + 1, rest, s, q, c);
        }
        self.counts[level] = 0;
    }
}

/// Exact lexicographic optimum over all ways to place `instances` on the
/// given levels. `options` must be ordered by non-increasing `value`.
pub fn allocate(options: &[LevelOption], instances: u32, lambda: f64) -> Result<Allocation> {
    if instances == 0 {
        return Err(Error::Infeasible("cluster has no instances".into()));
    }
    if options.is_empty() {
        return Err(Error::Infeasible("no levels to assign".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Infeasible(format!(
            "arrival rate {lambda} is not a finite non-negative number"
        )));
    }
    if options.windows(2).any(|w| w[1].value > w[0].value) {
        return Err(Error::Infeasible(
            "levels must be ordered by non-increasing value".into(),
        ));
    }
    if options.iter().any(|o| !(o.rate > 0.0)) {
        return Err(Error::Infeasible("every level needs a positive rate".into()));
    }
    let m = options.len();
    let mut max_rate_from = vec![0.0f64; m + 1];
    let mut min_weight_from = vec![u32::MAX; m + 1];
    for i in (0..m).rev() {
        max_rate_from[i] = max_rate_from[i + 1].max(options[i].rate);
        min_weight_from[i] = min_weight_from[i + 1].min(options[i].weight);
    }
    let mut search = Search {
        options,
        lambda,
        max_rate_from,
        min_weight_from,
        counts: vec![0; m],
        best: None,
    };
    search.visit(0, instances, 0.0, 0.0, 0);
    let (_, counts) = search.best.expect("at least one leaf is visited");
    Ok(fill(options, &counts, lambda))
}

/// a(K) = Σ_i H(K_i)·quality(K, K_i) for every grid level.
pub fn expected_quality(grid: &KGrid, hk: &Histogram, quality: &QualityProfile) -> Vec<f64> {
    grid.levels()
        .iter()
        .map(|&k| hk.iter().map(|(ki, h)| h * quality.quality(k, ki)).sum())
        .collect()
}

/// Level options for approximate-caching instances on `grid`.
pub fn grid_options(
    grid: &KGrid,
    hk: &Histogram,
    latency: &LatencyProfile,
    quality: &QualityProfile,
) -> Vec<LevelOption> {
    let values = expected_quality(grid, hk, quality);
    grid.levels()
        .iter()
        .zip(values)
        .map(|(&k, value)| LevelOption {
            rate: latency.max_batch_rate(grid.remaining_steps(k)),
            value,
            weight: k.0,
        })
        .collect()
}

/// Decides how many of `instances` run at each K and what load share each
/// level receives. Fractions are normalized over admitted load; the share of
/// the offered load that fits in capacity is `served_fraction`.
pub fn solve_assignment(
    grid: &KGrid,
    instances: u32,
    lambda: f64,
    hk: &Histogram,
    latency: &LatencyProfile,
    quality: &QualityProfile,
) -> Result<ClusterAssignment> {
    if !hk.keys_within(grid) {
        return Err(Error::InvalidHistogram("H has levels outside the grid".into()));
    }
    let options = grid_options(grid, hk, latency, quality);
    let alloc = allocate(&options, instances, lambda)?;
    Ok(to_assignment(grid, &alloc))
}

pub(crate) fn to_assignment(grid: &KGrid, alloc: &Allocation) -> ClusterAssignment {
    let counts: BTreeMap<_, _> = grid.levels().iter().zip(&alloc.counts).map(|(&k, &n)| (k, n)).collect();
    let fractions = normalized(grid, &alloc.load, alloc.served);
    ClusterAssignment {
        counts,
        fractions,
        served_fraction: alloc.served.min(1.0),
    }
}

fn normalized(grid: &KGrid, load: &[f64], served: f64) -> Histogram {
    let total: f64 = load.iter().sum();
    let mass = grid
        .levels()
        .iter()
        .zip(load)
        .map(|(&k, &f)| (k, if total > 0.0 { f / total } else { 0.0 }));
    debug_assert!((total - served).abs() < 1e-9);
    Histogram::new(mass).expect("normalized load is a distribution")
}
