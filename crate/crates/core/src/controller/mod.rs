//! The periodic resource controller: forecasts the optimal-K mix, assigns
//! instances to K levels, computes per-level load fractions, and plans how
//! prompts are redirected between levels.

pub mod assignment;
pub mod flow;
pub mod planner;
pub mod predictor;

use serde::{Deserialize, Serialize};

pub use assignment::{allocate, solve_assignment, Allocation, LevelOption};
pub use planner::{plan_routes, PlannedRoutes};
pub use predictor::{predict_hk, window_prediction_error, HkPredictor};

use crate::config::Config;
use crate::domain::{ClusterAssignment, Histogram, KGrid, LatencyProfile, QualityProfile, RoutePlan};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadMode {
    Low,
    High,
}

impl LoadMode {
    /// Threshold switching with hysteresis: enter high above `threshold`,
    /// return to low only below `threshold - hysteresis`.
    pub fn next(self, utilization: f64, threshold: f64, hysteresis: f64) -> LoadMode {
        match self {
            LoadMode::Low if utilization > threshold => LoadMode::High,
            LoadMode::High if utilization < threshold - hysteresis => LoadMode::Low,
            m => m,
        }
    }
}

/// Everything the controller needs besides the live state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSettings {
    pub instances: u32,
    pub grid: KGrid,
    pub latency: LatencyProfile,
    pub quality: QualityProfile,
    pub high_load_threshold: f64,
    pub hysteresis: f64,
    pub utilization_target: f64,
}

impl ControllerSettings {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            instances: cfg.cluster.gpus,
            grid: cfg.grid(),
            latency: cfg.latency.clone(),
            quality: cfg.quality.clone(),
            high_load_threshold: cfg.controller.high_load_threshold,
            hysteresis: cfg.controller.hysteresis,
            utilization_target: cfg.controller.utilization_target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub timestamp_s: f64,
    pub lambda_rps: f64,
    /// Forecast H_K used for planning.
    pub hk: Histogram,
    pub assignment: ClusterAssignment,
    pub route_plan: RoutePlan,
    /// D_Q achieved by `route_plan`.
    pub degradation: f64,
    /// Offered load over the assignment's unbatched capacity.
    pub utilization: f64,
    pub load_mode: LoadMode,
}

/// One controller period: forecast → assignment → route plan → load mode.
pub fn controller_tick(
    predictor: &HkPredictor,
    lambda: f64,
    previous: LoadMode,
    now: f64,
    settings: &ControllerSettings,
) -> Result<ControlDecision> {
    decide(&predict_hk(predictor), lambda, previous, now, settings)
}

/// [`controller_tick`] with an explicit forecast.
pub fn decide(
    hk: &Histogram,
    lambda: f64,
    previous: LoadMode,
    now: f64,
    s: &ControllerSettings,
) -> Result<ControlDecision> {
    let planned = lambda / s.utilization_target;
    let assignment = solve_assignment(&s.grid, s.instances, planned, hk, &s.latency, &s.quality)?;
    let routes = plan_routes(hk, &assignment.fractions, &s.quality, &s.grid)?;
    // Low-load mode serves one request at a time, so utilization is measured
    // against unbatched capacity in both directions.
    let capacity: f64 = assignment
        .counts
        .iter()
        .map(|(&k, &n)| n as f64 * s.latency.unbatched_rate(s.grid.remaining_steps(k)))
        .sum();
    let utilization = if capacity > 0.0 {
        lambda / capacity
    } else {
        f64::INFINITY
    };
    let load_mode = previous.next(utilization, s.high_load_threshold, s.hysteresis);
    Ok(ControlDecision {
        timestamp_s: now,
        lambda_rps: lambda,
        hk: hk.clone(),
        assignment,
        route_plan: routes.plan,
        degradation: routes.degradation,
        utilization,
        load_mode,
    })
}

/// Arrival rate from the timestamps that fell in a trailing window.
pub fn lambda_estimate(arrivals_in_window: &[f64], window_s: f64) -> f64 {
    assert!(window_s > 0.0, "rate window must be positive");
    arrivals_in_window.len() as f64 / window_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::KLevel;

    fn settings() -> ControllerSettings {
        ControllerSettings {
            instances: 8,
            grid: KGrid::new([0, 25], 50).unwrap(),
            latency: LatencyProfile::default(),
            quality: QualityProfile::default(),
            high_load_threshold: 0.8,
            hysteresis: 0.1,
            utilization_target: 1.0,
        }
    }

    #[test]
    fn lambda_from_counts() {
        let ts: Vec<f64> = (0..120).map(|i| i as f64 * 0.5).collect();
        assert_eq!(lambda_estimate(&ts, 60.0), 2.0);
        assert_eq!(lambda_estimate(&[], 60.0), 0.0);
    }

    #[test]
    fn hysteresis_rule() {
        assert_eq!(LoadMode::Low.next(0.85, 0.8, 0.1), LoadMode::High);
        assert_eq!(LoadMode::Low.next(0.75, 0.8, 0.1), LoadMode::Low);
        assert_eq!(LoadMode::High.next(0.75, 0.8, 0.1), LoadMode::High);
        assert_eq!(LoadMode::High.next(0.65, 0.8, 0.1), LoadMode::Low);
    }

    #[test]
    fn low_load_tick_is_all_vanilla() {
        let s = settings();
        let mut p = HkPredictor::new(s.grid.clone(), 100);
        for i in 0..100 {
            p.record(KLevel(if i % 2 == 0 { 0 } else { 25 }));
        }
        let d = controller_tick(&p, 0.1, LoadMode::Low, 0.0, &s).unwrap();
        assert_eq!(d.assignment.count(KLevel(0)), 8);
        assert_eq!(d.load_mode, LoadMode::Low);
        assert_eq!(d.degradation, 0.0);
    }

    #[test]
    fn load_step_flips_mode() {
        let s = settings();
        let p = HkPredictor::new(s.grid.clone(), 100);
        let unbatched = 8.0 * s.latency.unbatched_rate(50);
        let low = controller_tick(&p, 0.5 * unbatched, LoadMode::Low, 0.0, &s).unwrap();
        assert_eq!(low.load_mode, LoadMode::Low);
        let high = controller_tick(&p, 0.95 * unbatched, low.load_mode, 60.0, &s).unwrap();
        assert_eq!(high.load_mode, LoadMode::High);
    }

    #[test]
    fn tick_is_pure() {
        let s = settings();
        let mut p = HkPredictor::new(s.grid.clone(), 50);
        for i in 0..37 {
            p.record(KLevel(if i % 3 == 0 { 0 } else { 25 }));
        }
        let a = controller_tick(&p, 3.3, LoadMode::Low, 10.0, &s).unwrap();
        let b = controller_tick(&p, 3.3, LoadMode::Low, 10.0, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decision_marginals_match_fractions() {
        let s = settings();
        let hk = Histogram::new([(KLevel(0), 0.5), (KLevel(25), 0.5)]).unwrap();
        for lambda in [0.5, 2.0, 3.5, 5.0, 6.5, 9.0] {
            let d = decide(&hk, lambda, LoadMode::Low, 0.0, &s).unwrap();
            let m = d.route_plan.induced_marginal(&hk);
            for (k, f) in d.assignment.fractions.iter() {
                assert!((m.get(&k).copied().unwrap_or(0.0) - f).abs() < 1e-6);
            }
        }
    }
}
