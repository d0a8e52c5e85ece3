//! Per-prompt runtime path: redirect a prompt from its optimal K to an
//! executing K' via the route plan, choose a worker at K', and form batches.
//!
//! Worker choice is load-aware. In low-load mode prompts spread uniformly at
//! random and run alone. In high-load mode they top up the fullest queue that
//! has not reached the target batch size, so the batch that fires next is as
//! large as possible.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{HkPredictor, LoadMode};
use crate::domain::{KLevel, Prompt, RoutePlan};
use crate::error::{Error, Result};

/// Timing slack for comparing event times against the batch timeout.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchPolicy {
    /// b*: fire as soon as this many prompts are queued.
    pub target: usize,
    /// Δ: fire a partial batch once the oldest prompt has waited this long.
    pub timeout_s: f64,
}

impl BatchPolicy {
    pub fn for_mode(mode: LoadMode, max_batch: usize, timeout_s: f64) -> Self {
        let target = match mode {
            LoadMode::Low => 1,
            LoadMode::High => max_batch,
        };
        Self { target, timeout_s }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Queued {
    pub prompt: Prompt,
    pub enqueued_s: f64,
}

/// FIFO of prompts waiting at one worker.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkerQueue {
    items: VecDeque<Queued>,
}

impl WorkerQueue {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, prompt: Prompt, now: f64) {
        self.items.push_back(Queued {
            prompt,
            enqueued_s: now,
        });
    }

    pub fn oldest_enqueue(&self) -> Option<f64> {
        self.items.front().map(|q| q.enqueued_s)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Queued> {
        self.items.iter()
    }
}

/// What worker selection sees of one candidate worker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerView {
    pub id: usize,
    pub queue_len: usize,
    /// When the worker can start new work (now, if idle).
    pub busy_until: f64,
    /// Service time of everything already queued.
    pub queued_work_s: f64,
}

/// Samples the executing level K' for a prompt from its route-plan row.
pub fn route_prompt<R: Rng + ?Sized>(optimal_k: KLevel, plan: &RoutePlan, rng: &mut R) -> Result<KLevel> {
    let row = plan.row(optimal_k).ok_or(Error::MissingPlanRow(optimal_k))?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (&k, &p) in row {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(k);
        if u < acc {
            return Ok(k);
        }
    }
    last.ok_or(Error::MissingPlanRow(optimal_k))
}

/// Chooses among the workers running K'.
pub fn pick_worker<R: Rng + ?Sized>(
    k: KLevel,
    candidates: &[WorkerView],
    mode: LoadMode,
    batch_target: usize,
    rng: &mut R,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::NoWorkerAtLevel(k));
    }
    match mode {
        LoadMode::Low => Ok(candidates[rng.random_range(0..candidates.len())].id),
        LoadMode::High => Ok(greedy_pick(candidates, batch_target)),
    }
}

fn greedy_pick(candidates: &[WorkerView], batch_target: usize) -> usize {
    let open = candidates.iter().filter(|w| w.queue_len < batch_target);
    let best_open = open.min_by(|a, b| {
        b.queue_len
            .cmp(&a.queue_len)
            .then(a.busy_until.total_cmp(&b.busy_until))
            .then(a.id.cmp(&b.id))
    });
    if let Some(w) = best_open {
        return w.id;
    }
    candidates
        .iter()
        .min_by(|a, b| {
            (a.busy_until + a.queued_work_s)
                .total_cmp(&(b.busy_until + b.queued_work_s))
                .then(a.id.cmp(&b.id))
        })
        .expect("non-empty")
        .id
}

/// Pops the next batch from an idle worker's queue, if one should fire now.
pub fn form_batch(queue: &mut WorkerQueue, policy: &BatchPolicy, now: f64) -> Option<Vec<Queued>> {
    let oldest = queue.oldest_enqueue()?;
    let target = policy.target.max(1);
    if queue.len() >= target || now - oldest + TIME_EPS >= policy.timeout_s {
        let n = queue.len().min(target);
        Some(queue.items.drain(..n).collect())
    } else {
        None
    }
}

/// Appends a prompt's optimal K to the forecaster's history.
pub fn record_optimal_k(predictor: &mut HkPredictor, optimal_k: KLevel) {
    predictor.record(optimal_k);
}
