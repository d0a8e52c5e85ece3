//! K-to-K' route planning.
//!
//! Prompts forecast at optimal level K_i (mass H(K_i)) must be spread over
//! the levels the cluster actually runs so that each level K'_j receives its
//! load share F(K'_j). Sending a prompt to K'_j > K_i costs D(K'_j, K_i);
//! sending it to a slower level is free. The planner minimizes the expected
//! degradation
//!
//! ```text
//! D_Q = Σ_i Σ_{j: K'_j > K_i} P(K'_j | K_i) · H(K_i) · D(K'_j, K_i)
//! ```
//!
//! subject to row-stochastic P and Σ_i H(K_i)·P(K'_j|K_i) = F(K'_j). Among
//! optimal plans it prefers the one moving the least mass-weighted distance
//! |K' − K|. The problem is solved exactly as an integer min-cost flow over
//! masses scaled to [`MASS_UNITS`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::flow::MinCostFlow;
use crate::domain::{Histogram, KGrid, KLevel, QualityProfile, RoutePlan};
use crate::error::{Error, Result};

/// Probability mass is discretized to 1e-9.
pub const MASS_UNITS: i64 = 1_000_000_000;
/// Degradation values are discretized to 1e-9 before optimizing.
const COST_UNITS: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRoutes {
    pub plan: RoutePlan,
    /// Achieved D_Q.
    pub degradation: f64,
}

/// Solves the route-planning transportation problem.
pub fn plan_routes(
    hk: &Histogram,
    fractions: &Histogram,
    quality: &QualityProfile,
    grid: &KGrid,
) -> Result<PlannedRoutes> {
    if !hk.keys_within(grid) || !fractions.keys_within(grid) {
        return Err(Error::InvalidHistogram("histogram has levels outside the grid".into()));
    }
    let (sh, sf) = (hk.total(), fractions.total());
    if (sh - sf).abs() > 1e-9 || (sh - 1.0).abs() > 1e-9 {
        return Err(Error::Infeasible(format!(
            "supply {sh} and demand {sf} must both be normalized"
        )));
    }
    let levels = grid.levels();
    let m = levels.len();
    let supply = discretize(&hk.to_dense(grid));
    let demand = discretize(&fractions.to_dense(grid));

    // Lexicographic cost: degradation first, then distance moved. The
    // distance term summed over all mass stays below one degradation unit.
    let tie_scale = MASS_UNITS as i128 * (grid.total_steps() as i128 + 1);
    let source = 2 * m;
    let sink = 2 * m + 1;
    let mut net = MinCostFlow::new(2 * m + 2);
    let mut arcs = vec![vec![0usize; m]; m];
    for i in 0..m {
        net.add_edge(source, i, supply[i], 0);
        net.add_edge(m + i, sink, demand[i], 0);
    }
    for (i, &from) in levels.iter().enumerate() {
        for (j, &to) in levels.iter().enumerate() {
            let dist = from.0.abs_diff(to.0) as i128;
            let degr = if to > from {
                (quality.degradation(to, from) * COST_UNITS).round() as i128
            } else {
                0
            };
            arcs[i][j] = net.add_edge(i, m + j, MASS_UNITS, degr * tie_scale + dist);
        }
    }
    let (sent, _) = net.run(source, sink, MASS_UNITS);
    if sent != MASS_UNITS {
        return Err(Error::Infeasible("transportation problem has no feasible plan".into()));
    }

    let mut rows = BTreeMap::new();
    for (i, &from) in levels.iter().enumerate() {
        let row: BTreeMap<KLevel, f64> = if supply[i] > 0 {
            levels
                .iter()
                .enumerate()
                .filter_map(|(j, &to)| {
                    let f = net.flow(arcs[i][j]);
                    (f > 0).then(|| (to, f as f64 / supply[i] as f64))
                })
                .collect()
        } else {
            BTreeMap::from([(fallback_target(from, levels, &demand, quality), 1.0)])
        };
        rows.insert(from, renormalize(row));
    }
    let plan = RoutePlan::from_rows(rows)?;
    let degradation = plan.degradation(hk, quality);
    Ok(PlannedRoutes { plan, degradation })
}

/// Rows with no forecast mass still need a destination: the cheapest level
/// that receives load, closest first, slower first.
fn fallback_target(from: KLevel, levels: &[KLevel], demand: &[i64], q: &QualityProfile) -> KLevel {
    levels
        .iter()
        .zip(demand)
        .filter(|(_, &d)| d > 0)
        .map(|(&to, _)| to)
        .min_by(|&a, &b| {
            let key = |t: KLevel| (q.degradation(t, from), from.0.abs_diff(t.0), t);
            let (da, xa, ta) = key(a);
            let (db, xb, tb) = key(b);
            da.total_cmp(&db).then(xa.cmp(&xb)).then(ta.cmp(&tb))
        })
        .unwrap_or(from)
}

fn renormalize(mut row: BTreeMap<KLevel, f64>) -> BTreeMap<KLevel, f64> {
    let s: f64 = row.values().sum();
    row.values_mut().for_each(|p| *p /= s);
    row
}

/// Largest-remainder rounding of a distribution to integers summing to
/// exactly [`MASS_UNITS`].
fn discretize(mass: &[f64]) -> Vec<i64> {
    let total: f64 = mass.iter().sum();
    let scaled: Vec<f64> = mass.iter().map(|m| m / total * MASS_UNITS as f64).collect();
    let mut out: Vec<i64> = scaled.iter().map(|x| x.floor() as i64).collect();
    let mut short = MASS_UNITS - out.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..mass.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if short <= 0 {
            break;
        }
        if mass[i] > 0.0 {
            out[i] += 1;
            short -= 1;
        }
    }
    out
}
