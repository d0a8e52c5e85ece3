//! Comparison systems. All run in the same engine as the prompt-aware policy
//! and differ only in what each worker executes and how prompts are routed.
//!
//! - `clipper-ha`: every worker on the accurate variant, never switches.
//! - `clipper-ht`: the whole cluster moves to the fastest variant while load
//!   exceeds a utilization threshold, paying a model reload each time.
//! - `nirvana`: every prompt runs at its own optimal K; no capacity control.
//! - `proteus`: a variant ladder sized by the same allocator as the K grid,
//!   routing blind to the prompt.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Config, Variant};
use crate::controller::{allocate, LevelOption, LoadMode};
use crate::dispatcher::{pick_worker, BatchPolicy};
use crate::domain::{KLevel, LatencyProfile, Prompt};
use crate::error::{Error, Result};
use crate::policy::{rebalance, sample_index, Policy, Snapshot};
use crate::sim::{Execution, Switching};

/// Ordered model variants, most accurate first.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantLadder {
    pub variants: Vec<Variant>,
}

impl VariantLadder {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            variants: cfg.baselines.ladder.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn fastest(&self) -> usize {
        self.variants.len() - 1
    }

    pub fn labels(&self) -> Vec<String> {
        self.variants.iter().map(|v| v.name.clone()).collect()
    }

    /// Allocator options: capacity at full batches, nominal quality, and the
    /// step gap to the accurate variant as tie-break weight.
    pub fn options(&self, latency: &LatencyProfile, total_steps: u32) -> Vec<LevelOption> {
        self.variants
            .iter()
            .map(|v| LevelOption {
                rate: latency.max_batch_rate(v.steps),
                value: v.quality,
                weight: total_steps.saturating_sub(v.steps),
            })
            .collect()
    }
}

fn uniform_worker(snap: &Snapshot<'_>, rng: &mut ChaCha8Rng) -> Result<usize> {
    if snap.workers.is_empty() {
        return Err(Error::NoWorkerAtLevel(KLevel::VANILLA));
    }
    Ok(snap.workers[rng.random_range(0..snap.workers.len())].view.id)
}

fn variant_index(exec: Execution) -> usize {
    match exec {
        Execution::Variant(v) => v,
        _ => 0,
    }
}

// ── Clipper-HA ──────────────────────────────────────────────────────────────

pub struct ClipperHa {
    ladder: VariantLadder,
    timeout_s: f64,
}

impl ClipperHa {
    pub fn new(cfg: &Config) -> Self {
        Self {
            ladder: VariantLadder::from_config(cfg),
            timeout_s: cfg.dispatcher.batch_timeout_s,
        }
    }
}

impl Policy for ClipperHa {
    fn name(&self) -> &'static str {
        "clipper-ha"
    }

    fn switching(&self) -> Switching {
        Switching::Reload
    }

    fn initial(&self, instances: usize) -> Vec<Execution> {
        vec![Execution::Variant(0); instances]
    }

    fn level_labels(&self) -> Vec<String> {
        self.ladder.labels()
    }

    fn label_index(&self, exec: Execution) -> usize {
        variant_index(exec)
    }

    fn on_tick(&mut self, _snap: &Snapshot<'_>) -> Result<Option<Vec<Execution>>> {
        Ok(None)
    }

    fn route(&mut self, _prompt: &Prompt, snap: &Snapshot<'_>, rng: &mut ChaCha8Rng) -> Result<usize> {
        uniform_worker(snap, rng)
    }

    fn batch_policy(&self) -> BatchPolicy {
        BatchPolicy {
            target: 1,
            timeout_s: self.timeout_s,
        }
    }

    fn load_mode(&self) -> LoadMode {
        LoadMode::Low
    }
}

// ── Clipper-HT ──────────────────────────────────────────────────────────────

pub struct ClipperHt {
    ladder: VariantLadder,
    threshold: f64,
    accurate_rate: f64,
    timeout_s: f64,
    fast: bool,
}

impl ClipperHt {
    pub fn new(cfg: &Config) -> Self {
        let ladder = VariantLadder::from_config(cfg);
        let accurate_rate = cfg.latency.unbatched_rate(ladder.variants[0].steps);
        Self {
            ladder,
            threshold: cfg.baselines.ht_threshold,
            accurate_rate,
            timeout_s: cfg.dispatcher.batch_timeout_s,
            fast: false,
        }
    }
}

impl Policy for ClipperHt {
    fn name(&self) -> &'static str {
        "clipper-ht"
    }

    fn switching(&self) -> Switching {
        Switching::Reload
    }

    fn initial(&self, instances: usize) -> Vec<Execution> {
        vec![Execution::Variant(0); instances]
    }

    fn level_labels(&self) -> Vec<String> {
        self.ladder.labels()
    }

    fn label_index(&self, exec: Execution) -> usize {
        variant_index(exec)
    }

    fn on_tick(&mut self, snap: &Snapshot<'_>) -> Result<Option<Vec<Execution>>> {
        let capacity = snap.workers.len() as f64 * self.accurate_rate;
        let utilization = if capacity > 0.0 {
            snap.lambda_rps / capacity
        } else {
            f64::INFINITY
        };
        let fast = utilization > self.threshold;
        if fast == self.fast {
            return Ok(None);
        }
        self.fast = fast;
        let v = if fast { self.ladder.fastest() } else { 0 };
        Ok(Some(vec![Execution::Variant(v); snap.workers.len()]))
    }

    fn route(&mut self, _prompt: &Prompt, snap: &Snapshot<'_>, rng: &mut ChaCha8Rng) -> Result<usize> {
        uniform_worker(snap, rng)
    }

    fn batch_policy(&self) -> BatchPolicy {
        BatchPolicy {
            target: 1,
            timeout_s: self.timeout_s,
        }
    }

    fn load_mode(&self) -> LoadMode {
        LoadMode::Low
    }
}

// ── NIRVANA ─────────────────────────────────────────────────────────────────

pub struct Nirvana {
    timeout_s: f64,
}

impl Nirvana {
    pub fn new(cfg: &Config) -> Self {
        Self {
            timeout_s: cfg.dispatcher.batch_timeout_s,
        }
    }
}

impl Policy for Nirvana {
    fn name(&self) -> &'static str {
        "nirvana"
    }

    fn switching(&self) -> Switching {
        Switching::Instant
    }

    fn initial(&self, instances: usize) -> Vec<Execution> {
        vec![Execution::PerPrompt; instances]
    }

    fn level_labels(&self) -> Vec<String> {
        vec!["per-prompt".into()]
    }

    fn label_index(&self, _exec: Execution) -> usize {
        0
    }

    fn on_tick(&mut self, _snap: &Snapshot<'_>) -> Result<Option<Vec<Execution>>> {
        Ok(None)
    }

    fn route(&mut self, _prompt: &Prompt, snap: &Snapshot<'_>, rng: &mut ChaCha8Rng) -> Result<usize> {
        uniform_worker(snap, rng)
    }

    fn batch_policy(&self) -> BatchPolicy {
        BatchPolicy {
            target: 1,
            timeout_s: self.timeout_s,
        }
    }

    fn load_mode(&self) -> LoadMode {
        LoadMode::Low
    }
}

// ── Proteus ─────────────────────────────────────────────────────────────────

pub struct Proteus {
    ladder: VariantLadder,
    options: Vec<LevelOption>,
    latency: LatencyProfile,
    threshold: f64,
    hysteresis: f64,
    utilization_target: f64,
    timeout_s: f64,
    mode: LoadMode,
    /// Per-variant load fractions from the last allocation.
    load: Vec<f64>,
}

impl Proteus {
    pub fn new(cfg: &Config) -> Self {
        let ladder = VariantLadder::from_config(cfg);
        let options = ladder.options(&cfg.latency, cfg.k_grid.total_steps);
        let mut load = vec![0.0; ladder.len()];
        load[0] = 1.0;
        Self {
            ladder,
            options,
            latency: cfg.latency.clone(),
            threshold: cfg.controller.high_load_threshold,
            hysteresis: cfg.controller.hysteresis,
            utilization_target: cfg.controller.utilization_target,
            timeout_s: cfg.dispatcher.batch_timeout_s,
            mode: LoadMode::Low,
            load,
        }
    }
}

impl Policy for Proteus {
    fn name(&self) -> &'static str {
        "proteus"
    }

    fn switching(&self) -> Switching {
        Switching::Reload
    }

    fn initial(&self, instances: usize) -> Vec<Execution> {
        vec![Execution::Variant(0); instances]
    }

    fn level_labels(&self) -> Vec<String> {
        self.ladder.labels()
    }

    fn label_index(&self, exec: Execution) -> usize {
        variant_index(exec)
    }

    fn on_tick(&mut self, snap: &Snapshot<'_>) -> Result<Option<Vec<Execution>>> {
        let n = snap.workers.len() as u32;
        let alloc = allocate(&self.options, n, snap.lambda_rps / self.utilization_target)?;
        let capacity: f64 = alloc
            .counts
            .iter()
            .zip(&self.ladder.variants)
            .map(|(&c, v)| c as f64 * self.latency.unbatched_rate(v.steps))
            .sum();
        let utilization = if capacity > 0.0 {
            snap.lambda_rps / capacity
        } else {
            f64::INFINITY
        };
        self.mode = self.mode.next(utilization, self.threshold, self.hysteresis);
        self.load = if alloc.served > 0.0 {
            alloc.load.clone()
        } else {
            alloc.counts.iter().map(|&c| c as f64).collect()
        };
        let current: Vec<Option<usize>> = snap
            .workers
            .iter()
            .map(|w| match w.target {
                Execution::Variant(v) => Some(v),
                _ => None,
            })
            .collect();
        let targets = rebalance(&current, &alloc.counts)
            .into_iter()
            .map(Execution::Variant)
            .collect();
        Ok(Some(targets))
    }

    fn route(&mut self, _prompt: &Prompt, snap: &Snapshot<'_>, rng: &mut ChaCha8Rng) -> Result<usize> {
        let v = sample_index(&self.load, rng);
        let candidates = snap.candidates(Execution::Variant(v));
        pick_worker(
            KLevel(v as u32),
            &candidates,
            self.mode,
            self.batch_policy().target,
            rng,
        )
    }

    fn batch_policy(&self) -> BatchPolicy {
        BatchPolicy::for_mode(self.mode, self.latency.max_batch, self.timeout_s)
    }

    fn load_mode(&self) -> LoadMode {
        self.mode
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatcher::WorkerView;
    use crate::policy::WorkerInfo;

    fn infos(targets: &[Execution]) -> Vec<WorkerInfo> {
        targets
            .iter()
            .enumerate()
            .map(|(id, &target)| WorkerInfo {
                target,
                view: WorkerView {
                    id,
                    queue_len: 0,
                    busy_until: 0.0,
                    queued_work_s: 0.0,
                },
            })
            .collect()
    }

    fn snap(workers: &[WorkerInfo], lambda: f64) -> Snapshot<'_> {
        Snapshot {
            now: 0.0,
            lambda_rps: lambda,
            workers,
        }
    }

    #[test]
    fn ht_switches_whole_cluster_on_threshold() {
        let cfg = Config::default();
        let mut p = ClipperHt::new(&cfg);
        let w = infos(&[Execution::Variant(0); 8]);
        // Accurate capacity is 8 × 0.2 = 1.6 rps; threshold 0.8 → 1.28 rps.
        assert_eq!(p.on_tick(&snap(&w, 1.2)).unwrap(), None);
        let t = p.on_tick(&snap(&w, 1.4)).unwrap().unwrap();
        assert!(t.iter().all(|&e| e == Execution::Variant(1)));
        assert_eq!(p.on_tick(&snap(&w, 1.4)).unwrap(), None);
        let back = p.on_tick(&snap(&w, 1.0)).unwrap().unwrap();
        assert!(back.iter().all(|&e| e == Execution::Variant(0)));
    }

    #[test]
    fn proteus_keeps_accurate_at_low_load() {
        let cfg = Config::default();
        let mut p = Proteus::new(&cfg);
        let w = infos(&[Execution::Variant(0); 8]);
        let t = p.on_tick(&snap(&w, 0.5)).unwrap().unwrap();
        assert!(t.iter().all(|&e| e == Execution::Variant(0)));
    }

    #[test]
    fn proteus_moves_some_workers_under_load() {
        let cfg = Config::default();
        let mut p = Proteus::new(&cfg);
        let w = infos(&[Execution::Variant(0); 8]);
        // Planned load 3.0 / 0.7 exceeds the accurate full-batch capacity
        // of 8 × 4/9.5 ≈ 3.37 rps but not the fast one.
        let t = p.on_tick(&snap(&w, 3.0)).unwrap().unwrap();
        let fast = t.iter().filter(|&&e| e == Execution::Variant(1)).count();
        assert!(fast > 0 && fast < 8, "{fast}");
        assert_eq!(p.load_mode(), LoadMode::High);
    }

    #[test]
    fn ladder_options() {
        let cfg = Config::default();
        let ladder = VariantLadder::from_config(&cfg);
        let o = ladder.options(&cfg.latency, 50);
        assert_eq!(o[0].weight, 0);
        assert_eq!(o[1].weight, 25);
        assert_eq!(o[1].value, 0.85);
        assert!(o[1].rate > o[0].rate);
    }
}
