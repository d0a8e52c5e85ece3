//! Scheduling policies plug into the engine through [`Policy`]. This module
//! holds the prompt-aware policy (`acs`); the comparison systems live in
//! [`crate::baselines`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{ClipperHa, ClipperHt, Nirvana, Proteus};
use crate::config::Config;
use crate::controller::{controller_tick, ControlDecision, ControllerSettings, HkPredictor, LoadMode};
use crate::dispatcher::{pick_worker, record_optimal_k, route_prompt, BatchPolicy, WorkerView};
use crate::domain::{KGrid, KLevel, Prompt};
use crate::error::{Error, Result};
use crate::sim::{Execution, Switching};

pub const POLICY_NAMES: [&str; 5] = ["acs", "clipper-ha", "clipper-ht", "nirvana", "proteus"];

/// What a policy sees of one worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerInfo {
    /// Configuration the worker runs or is switching to.
    pub target: Execution,
    pub view: WorkerView,
}

/// Cluster state handed to a policy at a decision point.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub now: f64,
    /// Trailing-window arrival rate estimate (only meaningful at ticks).
    pub lambda_rps: f64,
    pub workers: &'a [WorkerInfo],
}

impl Snapshot<'_> {
    pub fn candidates(&self, exec: Execution) -> Vec<WorkerView> {
        self.workers
            .iter()
            .filter(|w| w.target == exec)
            .map(|w| w.view)
            .collect()
    }

    pub fn all(&self) -> Vec<WorkerView> {
        self.workers.iter().map(|w| w.view).collect()
    }
}

pub trait Policy: Send {
    fn name(&self) -> &'static str;

    fn switching(&self) -> Switching;

    /// Worker configurations at time zero (already loaded, no overhead).
    fn initial(&self, instances: usize) -> Vec<Execution>;

    /// Labels for occupancy reporting.
    fn level_labels(&self) -> Vec<String>;

    fn label_index(&self, exec: Execution) -> usize;

    /// Periodic control step. Returns new per-worker targets, if any.
    fn on_tick(&mut self, snap: &Snapshot<'_>) -> Result<Option<Vec<Execution>>>;

    /// Chooses the worker for an arriving prompt (its optimal K is set).
    fn route(&mut self, prompt: &Prompt, snap: &Snapshot<'_>, rng: &mut ChaCha8Rng) -> Result<usize>;

    fn batch_policy(&self) -> BatchPolicy;

    fn load_mode(&self) -> LoadMode;
}

pub fn build_policy(name: &str, cfg: &Config) -> Result<Box<dyn Policy>> {
    Ok(match name {
        "acs" => Box::new(AcsPolicy::new(cfg)),
        "clipper-ha" => Box::new(ClipperHa::new(cfg)),
        "clipper-ht" => Box::new(ClipperHt::new(cfg)),
        "nirvana" => Box::new(Nirvana::new(cfg)),
        "proteus" => Box::new(Proteus::new(cfg)),
        other => return Err(Error::UnknownPolicy(other.to_string())),
    })
}

/// Moves as few workers as possible so that level `i` ends up with
/// `desired[i]` workers. `current[w]` is worker `w`'s level, if it has one.
pub fn rebalance(current: &[Option<usize>], desired: &[u32]) -> Vec<usize> {
    let mut left = desired.to_vec();
    let mut out: Vec<Option<usize>> = vec![None; current.len()];
    for (w, c) in current.iter().enumerate() {
        if let Some(i) = *c {
            if left.get(i).is_some_and(|&n| n > 0) {
                left[i] -= 1;
                out[w] = Some(i);
            }
        }
    }
    for slot in out.iter_mut().filter(|s| s.is_none()) {
        let i = left
            .iter()
            .position(|&n| n > 0)
            .expect("desired counts cover every worker");
        left[i] -= 1;
        *slot = Some(i);
    }
    out.into_iter().map(|s| s.expect("assigned")).collect()
}

/// Draws an index from a discrete distribution.
pub(crate) fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

// ── Prompt-aware policy ─────────────────────────────────────────────────────

/// Approximate-caching instances on a K grid, driven by the periodic
/// controller; prompts are redirected with the route plan and dispatched
/// with load-aware route-and-batch.
pub struct AcsPolicy {
    settings: ControllerSettings,
    predictor: HkPredictor,
    decision: Option<ControlDecision>,
    mode: LoadMode,
    timeout_s: f64,
    decisions: Vec<ControlDecision>,
}

impl AcsPolicy {
    pub fn new(cfg: &Config) -> Self {
        let settings = ControllerSettings::from_config(cfg);
        Self {
            predictor: HkPredictor::new(settings.grid.clone(), cfg.controller.window),
            settings,
            decision: None,
            mode: LoadMode::Low,
            timeout_s: cfg.dispatcher.batch_timeout_s,
            decisions: Vec::new(),
        }
    }

    pub fn grid(&self) -> &KGrid {
        &self.settings.grid
    }

    /// Every decision taken so far, in tick order.
    pub fn decisions(&self) -> &[ControlDecision] {
        &self.decisions
    }
}

impl Policy for AcsPolicy {
    fn name(&self) -> &'static str {
        "acs"
    }

    fn switching(&self) -> Switching {
        Switching::Instant
    }

    fn initial(&self, instances: usize) -> Vec<Execution> {
        vec![Execution::Approx(KLevel::VANILLA); instances]
    }

    fn level_labels(&self) -> Vec<String> {
        self.settings.grid.levels().iter().map(|k| format!("k{k}")).collect()
    }

    fn label_index(&self, exec: Execution) -> usize {
        match exec {
            Execution::Approx(k) => self.settings.grid.index_of(k).unwrap_or(0),
            _ => 0,
        }
    }

    fn on_tick(&mut self, snap: &Snapshot<'_>) -> Result<Option<Vec<Execution>>> {
        let d = controller_tick(&self.predictor, snap.lambda_rps, self.mode, snap.now, &self.settings)?;
        self.mode = d.load_mode;
        let grid = &self.settings.grid;
        let desired: Vec<u32> = grid.levels().iter().map(|&k| d.assignment.count(k)).collect();
        let current: Vec<Option<usize>> = snap
            .workers
            .iter()
            .map(|w| match w.target {
                Execution::Approx(k) => grid.index_of(k),
                _ => None,
            })
            .collect();
        let targets = rebalance(&current, &desired)
            .into_iter()
            .map(|i| Execution::Approx(grid.levels()[i]))
            .collect();
        self.decisions.push(d.clone());
        self.decision = Some(d);
        Ok(Some(targets))
    }

    fn route(&mut self, prompt: &Prompt, snap: &Snapshot<'_>, rng: &mut ChaCha8Rng) -> Result<usize> {
        let optimal = prompt.optimal_k.unwrap_or(KLevel::VANILLA);
        record_optimal_k(&mut self.predictor, optimal);
        let decision = self
            .decision
            .as_ref()
            .ok_or_else(|| Error::Infeasible("no controller decision yet".into()))?;
        let k = route_prompt(optimal, &decision.route_plan, rng)?;
        let candidates = snap.candidates(Execution::Approx(k));
        pick_worker(k, &candidates, self.mode, self.batch_policy().target, rng)
    }

    fn batch_policy(&self) -> BatchPolicy {
        BatchPolicy::for_mode(self.mode, self.settings.latency.max_batch, self.timeout_s)
    }

    fn load_mode(&self) -> LoadMode {
        self.mode
    }
}
