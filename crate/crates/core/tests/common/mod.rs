//! Independent reference implementations used as test oracles. Nothing here
//! calls into the solver code under test.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TOTAL_STEPS: u32 = 50;
pub const SLOPE: f64 = 0.006;

/// Quality of running a prompt whose optimal level is `opt` at level `exec`.
pub fn quality(exec: u32, opt: u32) -> f64 {
    if exec <= opt {
        1.0
    } else {
        (1.0 - SLOPE * (exec - opt) as f64).max(0.0)
    }
}

pub fn degradation(exec: u32, opt: u32) -> f64 {
    1.0 - quality(exec, opt)
}

/// Seconds for a batch of `b` prompts skipping `k` of the 50 steps.
pub fn service(k: u32, b: usize) -> f64 {
    (TOTAL_STEPS - k) as f64 * 0.1 * (1.0 + 0.3 * (b as f64 - 1.0))
}

/// Requests/s one instance sustains at level `k` with full batches of 4.
pub fn full_batch_rate(k: u32) -> f64 {
    4.0 / service(k, 4)
}

/// Random sorted subset of {0, 5, ..., 25} with `m` elements, always
/// containing 0.
pub fn random_levels(rng: &mut ChaCha8Rng, m: usize) -> Vec<u32> {
    let mut rest: Vec<u32> = (1..6).map(|i| i * 5).collect();
    for i in (1..rest.len()).rev() {
        let j = rng.random_range(0..=i);
        rest.swap(i, j);
    }
    let mut out: Vec<u32> = std::iter::once(0).chain(rest.into_iter().take(m - 1)).collect();
    out.sort_unstable();
    out
}

/// Uniformly random composition of `units` into `m` non-negative parts.
pub fn random_composition(rng: &mut ChaCha8Rng, units: u32, m: usize) -> Vec<u32> {
    // Stars and bars: choose m-1 bar positions among units+m-1 slots.
    let slots = units as usize + m - 1;
    let mut bars: Vec<usize> = Vec::new();
    while bars.len() < m - 1 {
        let b = rng.random_range(0..slots);
        if !bars.contains(&b) {
            bars.push(b);
        }
    }
    bars.sort_unstable();
    let mut parts = Vec::with_capacity(m);
    let mut prev: isize = -1;
    for &b in &bars {
        parts.push((b as isize - prev - 1) as u32);
        prev = b as isize;
    }
    parts.push((slots as isize - prev - 1) as u32);
    parts
}

/// Minimum expected degradation of a transportation plan moving integer
/// supply units (optimal levels) onto integer demand units (executed
/// levels), by exhaustive dynamic programming over remaining demand.
/// Integral optima suffice because the constraint matrix is totally
/// unimodular.
pub fn transport_min_degradation(levels: &[u32], supply: &[u32], demand: &[u32], units: u32) -> f64 {
    fn go(
        row: usize,
        remaining: Vec<u32>,
        levels: &[u32],
        supply: &[u32],
        units: f64,
        memo: &mut HashMap<(usize, Vec<u32>), f64>,
    ) -> f64 {
        if row == supply.len() {
            return if remaining.iter().all(|&r| r == 0) {
                0.0
            } else {
                f64::INFINITY
            };
        }
        if let Some(&v) = memo.get(&(row, remaining.clone())) {
            return v;
        }
        let mut best = f64::INFINITY;
        let mut split = vec![0u32; levels.len()];
        splits(supply[row], 0, &remaining, &mut split, &mut |s| {
            let cost: f64 = s
                .iter()
                .enumerate()
                .map(|(j, &x)| x as f64 / units * degradation(levels[j], levels[row]))
                .sum();
            let rest: Vec<u32> = remaining.iter().zip(s).map(|(r, x)| r - x).collect();
            let total = cost + go(row + 1, rest, levels, supply, units, memo);
            if total < best {
                best = total;
            }
        });
        memo.insert((row, remaining), best);
        best
    }

    fn splits(left: u32, j: usize, cap: &[u32], cur: &mut Vec<u32>, f: &mut dyn FnMut(&[u32])) {
        if j == cap.len() - 1 {
            if left <= cap[j] {
                cur[j] = left;
                f(cur);
            }
            return;
        }
        for x in 0..=left.min(cap[j]) {
            cur[j] = x;
            splits(left - x, j + 1, cap, cur, f);
        }
    }

    let mut memo = HashMap::new();
    go(0, demand.to_vec(), levels, supply, units as f64, &mut memo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAllocation {
    pub counts: Vec<u32>,
    pub served: f64,
    pub quality: f64,
    pub weight: u64,
}

/// For fixed counts, spreads load over levels so that the served fraction
/// and then expected quality are maximal: a fractional knapsack, filled in
/// order of decreasing per-level quality.
pub fn fill_by_value(values: &[f64], rates: &[f64], counts: &[u32], lambda: f64) -> (f64, f64, Vec<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut served = 0.0;
    let mut q = 0.0;
    let mut load = vec![0.0; values.len()];
    for i in order {
        if counts[i] == 0 {
            continue;
        }
        let cap = if lambda <= 0.0 {
            f64::INFINITY
        } else {
            counts[i] as f64 * rates[i] / lambda
        };
        let f = cap.min(1.0 - served).max(0.0);
        served += f;
        q += f * values[i];
        load[i] = f;
    }
    (served, q, load)
}

/// Enumerates every placement of `n` instances on the levels and returns
/// the lexicographic best: max served, max quality, min Σ n·K, then the
/// lexicographically largest count vector.
pub fn exhaustive_assignment(levels: &[u32], h: &[f64], n: u32, lambda: f64) -> OracleAllocation {
    let values: Vec<f64> = levels
        .iter()
        .map(|&k| levels.iter().zip(h).map(|(&ki, &p)| p * quality(k, ki)).sum())
        .collect();
    let rates: Vec<f64> = levels.iter().map(|&k| full_batch_rate(k)).collect();
    let mut best: Option<OracleAllocation> = None;
    let mut counts = vec![0u32; levels.len()];
    compositions(n, 0, &mut counts, &mut |c| {
        let (served, q, _) = fill_by_value(&values, &rates, c, lambda);
        let weight: u64 = c.iter().zip(levels).map(|(&x, &k)| x as u64 * k as u64).sum();
        let cand = OracleAllocation {
            counts: c.to_vec(),
            served,
            quality: q,
            weight,
        };
        let better = match &best {
            None => true,
            Some(b) => lex_better(&cand, b),
        };
        if better {
            best = Some(cand);
        }
    });
    best.expect("at least one composition")
}

const EPS: f64 = 1e-12;

fn lex_better(a: &OracleAllocation, b: &OracleAllocation) -> bool {
    if (a.served - b.served).abs() > EPS {
        return a.served > b.served;
    }
    if (a.quality - b.quality).abs() > EPS {
        return a.quality > b.quality;
    }
    if a.weight != b.weight {
        return a.weight < b.weight;
    }
    a.counts > b.counts
}

fn compositions(left: u32, j: usize, cur: &mut Vec<u32>, f: &mut dyn FnMut(&[u32])) {
    if j == cur.len() - 1 {
        cur[j] = left;
        f(cur);
        return;
    }
    for x in 0..=left {
        cur[j] = x;
        compositions(left - x, j + 1, cur, f);
    }
}
