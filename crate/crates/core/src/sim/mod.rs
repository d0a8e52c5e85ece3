//! Deterministic discrete-event simulation of a GPU serving cluster.

mod engine;

pub use engine::{run, simulate};

use serde::{Deserialize, Serialize};

use crate::dispatcher::{Queued, WorkerQueue};
use crate::domain::{KGrid, KLevel, LatencyProfile};

/// Wall time of a batch of `batch` prompts at level `k`.
pub fn service_time(k: KLevel, batch: usize, grid: &KGrid, latency: &LatencyProfile) -> f64 {
    latency.batch_time(grid.remaining_steps(k), batch)
}

/// What a worker executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Execution {
    /// The base model with approximate caching at a fixed K.
    Approx(KLevel),
    /// A separately loaded model variant (index into the variant ladder).
    Variant(usize),
    /// Each prompt runs at its own optimal K.
    PerPrompt,
}

/// How a policy's configuration changes take effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Switching {
    /// Same weights, different K: applies at the next idle moment for free.
    Instant,
    /// A different model must be loaded, paying the load overhead.
    Reload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerStatus {
    Idle,
    Busy,
    Loading,
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    pub current: Execution,
    /// Configuration requested by the policy; equals `current` unless a
    /// switch is pending.
    pub target: Execution,
    pub status: WorkerStatus,
    pub queue: WorkerQueue,
    pub busy_until: f64,
    pub busy_time_s: f64,
    pub loading_time_s: f64,
    pub(crate) in_flight: Vec<Queued>,
    pub(crate) timeout_at: Option<f64>,
}

impl WorkerState {
    pub fn new(id: usize, exec: Execution) -> Self {
        Self {
            id,
            current: exec,
            target: exec,
            status: WorkerStatus::Idle,
            queue: WorkerQueue::default(),
            busy_until: 0.0,
            busy_time_s: 0.0,
            loading_time_s: 0.0,
            in_flight: Vec::new(),
            timeout_at: None,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.status == WorkerStatus::Idle
    }
}

/// Approximate-caching switch: takes effect immediately on an idle worker,
/// otherwise once the running batch completes. Never costs time.
pub fn switch_worker_k(worker: &mut WorkerState, k: KLevel) {
    worker.target = Execution::Approx(k);
    if worker.is_idle() {
        worker.current = worker.target;
    }
}

/// Variant switch. An idle worker starts loading now and the returned time is
/// when loading completes; a busy worker loads after its batch. Switching to
/// the variant already in place is a no-op.
pub fn switch_worker_variant(
    worker: &mut WorkerState,
    variant: usize,
    latency: &LatencyProfile,
    now: f64,
) -> Option<f64> {
    worker.target = Execution::Variant(variant);
    if worker.target == worker.current || !worker.is_idle() {
        return None;
    }
    Some(begin_load(worker, latency.load_overhead_s, now))
}

pub(crate) fn begin_load(worker: &mut WorkerState, overhead_s: f64, now: f64) -> f64 {
    worker.current = worker.target;
    worker.status = WorkerStatus::Loading;
    worker.busy_until = now + overhead_s;
    worker.loading_time_s += overhead_s;
    worker.busy_until
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn service_time_examples() {
        let grid = KGrid::new([0, 25], 50).unwrap();
        let lat = LatencyProfile::default();
        assert!((service_time(KLevel(0), 1, &grid, &lat) - 5.0).abs() < 1e-12);
        assert!((service_time(KLevel(25), 1, &grid, &lat) - 2.5).abs() < 1e-12);
        assert!((service_time(KLevel(0), 4, &grid, &lat) - 9.5).abs() < 1e-12);
    }

    #[test]
    fn service_time_monotonicity() {
        let grid = KGrid::new([0, 5, 10, 15, 20, 25], 50).unwrap();
        let lat = LatencyProfile::default();
        for b in 1..=4 {
            for w in grid.levels().windows(2) {
                assert!(service_time(w[1], b, &grid, &lat) < service_time(w[0], b, &grid, &lat));
            }
        }
        for &k in grid.levels() {
            for b in 1..4 {
                let t0 = service_time(k, b, &grid, &lat);
                let t1 = service_time(k, b + 1, &grid, &lat);
                assert!(t1 > t0);
                assert!(t1 / ((b + 1) as f64) < t0 / (b as f64));
            }
        }
    }

    #[test]
    fn k_switch_on_idle_is_immediate() {
        let mut w = WorkerState::new(0, Execution::Approx(KLevel(0)));
        switch_worker_k(&mut w, KLevel(25));
        assert_eq!(w.current, Execution::Approx(KLevel(25)));
        assert_eq!(w.loading_time_s, 0.0);
    }

    #[test]
    fn k_switch_on_busy_waits_for_batch() {
        let mut w = WorkerState::new(0, Execution::Approx(KLevel(0)));
        w.status = WorkerStatus::Busy;
        switch_worker_k(&mut w, KLevel(25));
        assert_eq!(w.current, Execution::Approx(KLevel(0)));
        assert_eq!(w.target, Execution::Approx(KLevel(25)));
    }

    #[test]
    fn k_switch_to_same_level_is_noop() {
        let mut w = WorkerState::new(0, Execution::Approx(KLevel(10)));
        switch_worker_k(&mut w, KLevel(10));
        assert_eq!(w.current, w.target);
        assert_eq!(w.status, WorkerStatus::Idle);
    }

    #[test]
    fn variant_switch_pays_overhead() {
        let lat = LatencyProfile::default();
        let mut w = WorkerState::new(0, Execution::Variant(0));
        let done = switch_worker_variant(&mut w, 1, &lat, 100.0).unwrap();
        assert_eq!(done, 120.0);
        assert_eq!(w.status, WorkerStatus::Loading);
        assert_eq!(w.loading_time_s, 20.0);
        assert!(switch_worker_variant(&mut w, 1, &lat, 100.0).is_none());
    }

    #[test]
    fn variant_switch_to_same_variant_is_free() {
        let lat = LatencyProfile::default();
        let mut w = WorkerState::new(0, Execution::Variant(0));
        assert!(switch_worker_variant(&mut w, 0, &lat, 0.0).is_none());
        assert_eq!(w.loading_time_s, 0.0);
        assert!(w.is_idle());
    }
}
