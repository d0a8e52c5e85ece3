use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand_chacha::ChaCha8Rng;

use super::{begin_load, Execution, Switching, WorkerState, WorkerStatus};
use crate::cache::{select_optimal_k, CacheStore, SimilarityBands};
use crate::config::{Config, Variant};
use crate::controller::{lambda_estimate, LoadMode};
use crate::dispatcher::{form_batch, Queued, WorkerView};
use crate::domain::{KGrid, KLevel, LatencyProfile, Prompt, QualityProfile};
use crate::error::{Error, Result};
use crate::metrics::{CompletionRecord, MetricsLog, OccupancySample};
use crate::policy::{build_policy, Policy, Snapshot, WorkerInfo};
use crate::rng;
use crate::workload::{gen_arrivals, gen_prompt_stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Arrival(usize),
    BatchComplete(usize),
    BatchTimeout(usize),
    LoadComplete(usize),
    ControllerTick,
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Generates the configured workload and runs the configured policy on it.
pub fn simulate(cfg: &Config) -> Result<MetricsLog> {
    let arrivals = gen_arrivals(&cfg.trace_spec())?;
    let prompts = gen_prompt_stream(&arrivals, &cfg.population(), cfg.seed, cfg.slo.latency_s);
    let mut policy = build_policy(&cfg.policy, cfg)?;
    run(cfg, policy.as_mut(), prompts)
}

/// Runs `policy` over a prompt stream (sorted by arrival) until every
/// prompt has completed.
pub fn run(cfg: &Config, policy: &mut dyn Policy, prompts: Vec<Prompt>) -> Result<MetricsLog> {
    if prompts.windows(2).any(|w| w[1].arrival_s < w[0].arrival_s) {
        return Err(Error::InvalidConfig(vec![crate::error::Violation::new(
            "prompts",
            "arrivals must be sorted by time".to_string(),
        )]));
    }
    let mut engine = Engine::new(cfg, policy, prompts);
    engine.prewarm(cfg);
    engine.run()?;
    Ok(engine.finish())
}

struct Engine<'a> {
    policy: &'a mut dyn Policy,
    grid: KGrid,
    latency: LatencyProfile,
    quality: QualityProfile,
    ladder: Vec<Variant>,
    bands: SimilarityBands,
    cache: CacheStore,
    duration_s: f64,
    tick_period_s: f64,
    lambda_window_s: f64,
    seed: u64,
    slo_s: f64,
    prompts: Vec<Option<Prompt>>,
    arrival_times: Vec<f64>,
    workers: Vec<WorkerState>,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    now: f64,
    rng: ChaCha8Rng,
    records: Vec<CompletionRecord>,
    occupancy: Vec<OccupancySample>,
    variant_switches: u64,
    k_switches: u64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &Config, policy: &'a mut dyn Policy, prompts: Vec<Prompt>) -> Self {
        let n = cfg.cluster.gpus as usize;
        let workers = policy
            .initial(n)
            .into_iter()
            .enumerate()
            .map(|(id, e)| WorkerState::new(id, e))
            .collect();
        let mut engine = Self {
            policy,
            grid: cfg.grid(),
            latency: cfg.latency.clone(),
            quality: cfg.quality.clone(),
            ladder: cfg.baselines.ladder.clone(),
            bands: cfg.bands(),
            cache: CacheStore::new(cfg.cache.capacity),
            duration_s: cfg.workload.duration_s,
            tick_period_s: cfg.controller.period_s,
            lambda_window_s: cfg.controller.lambda_window_s,
            seed: cfg.seed,
            slo_s: cfg.slo.latency_s,
            arrival_times: Vec::with_capacity(prompts.len()),
            prompts: Vec::new(),
            workers,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            rng: rng::stream(cfg.seed, rng::ROUTING),
            records: Vec::with_capacity(prompts.len()),
            occupancy: Vec::new(),
            variant_switches: 0,
            k_switches: 0,
        };
        engine.schedule(0.0, Event::ControllerTick);
        for (i, p) in prompts.iter().enumerate() {
            engine.schedule(p.arrival_s, Event::Arrival(i));
        }
        engine.prompts = prompts.into_iter().map(Some).collect();
        engine
    }

    fn prewarm(&mut self, cfg: &Config) {
        if cfg.cache.prewarm == 0 {
            return;
        }
        let population = cfg.population();
        let mut r = rng::stream(cfg.seed, rng::PREWARM);
        for _ in 0..cfg.cache.prewarm {
            let c = population.sample_cluster(0.0, &mut r);
            self.cache.insert(population.sample_embedding(c, &mut r));
        }
    }

    fn schedule(&mut self, time: f64, event: Event) {
        self.seq += 1;
        self.heap.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
    }

    fn run(&mut self) -> Result<()> {
        while let Some(s) = self.heap.pop() {
            assert!(s.time >= self.now, "event time went backwards");
            self.now = s.time;
            match s.event {
                Event::Arrival(i) => self.on_arrival(i)?,
                Event::BatchComplete(w) => self.on_batch_complete(w),
                Event::BatchTimeout(w) => {
                    if self.workers[w].timeout_at == Some(s.time) {
                        self.workers[w].timeout_at = None;
                        self.try_start(w);
                    }
                }
                Event::LoadComplete(w) => {
                    self.workers[w].status = WorkerStatus::Idle;
                    self.try_start(w);
                }
                Event::ControllerTick => self.on_tick()?,
            }
        }
        Ok(())
    }

    fn policy_error(&self, e: Error) -> Error {
        Error::Policy {
            time_s: self.now,
            source: Box::new(e),
        }
    }

    fn infos(&self) -> Vec<WorkerInfo> {
        let target = self.policy.batch_policy().target.max(1);
        self.workers
            .iter()
            .map(|w| {
                let batches = w.queue.len().div_ceil(target);
                let per_batch = self.exec_time(w.target, target.min(w.queue.len().max(1)), None);
                WorkerInfo {
                    target: w.target,
                    view: WorkerView {
                        id: w.id,
                        queue_len: w.queue.len(),
                        busy_until: w.busy_until.max(self.now),
                        queued_work_s: batches as f64 * per_batch,
                    },
                }
            })
            .collect()
    }

    fn on_arrival(&mut self, i: usize) -> Result<()> {
        let mut prompt = self.prompts[i].take().expect("each arrival fires once");
        let hit = self.cache.nearest(&prompt.embedding);
        if let Some((_, id)) = hit {
            self.cache.touch(id);
        }
        prompt.optimal_k = Some(select_optimal_k(hit.map(|h| h.0), &self.bands));
        self.arrival_times.push(self.now);

        let infos = self.infos();
        let snap = Snapshot {
            now: self.now,
            lambda_rps: 0.0,
            workers: &infos,
        };
        let w = self
            .policy
            .route(&prompt, &snap, &mut self.rng)
            .map_err(|e| self.policy_error(e))?;
        self.workers[w].queue.push(prompt, self.now);
        self.try_start(w);
        Ok(())
    }

    fn on_tick(&mut self) -> Result<()> {
        let from = self.now - self.lambda_window_s;
        let start = self.arrival_times.partition_point(|&t| t <= from);
        let span = self.lambda_window_s.min(self.now);
        let lambda = if span > 0.0 {
            lambda_estimate(&self.arrival_times[start..], span)
        } else {
            0.0
        };
        let infos = self.infos();
        let snap = Snapshot {
            now: self.now,
            lambda_rps: lambda,
            workers: &infos,
        };
        let targets = self.policy.on_tick(&snap).map_err(|e| self.policy_error(e))?;
        if let Some(targets) = targets {
            for (w, t) in self.workers.iter_mut().zip(targets) {
                w.target = t;
            }
        }
        for w in 0..self.workers.len() {
            self.try_start(w);
        }

        let mut counts = vec![0u32; self.policy.level_labels().len()];
        for w in &self.workers {
            if let Some(c) = counts.get_mut(self.policy.label_index(w.target)) {
                *c += 1;
            }
        }
        self.occupancy.push(OccupancySample {
            time_s: self.now,
            counts,
            high_load: self.policy.load_mode() == LoadMode::High,
        });
        let next = self.now + self.tick_period_s;
        if next < self.duration_s {
            self.schedule(next, Event::ControllerTick);
        }
        Ok(())
    }

    /// Applies a pending switch or starts a batch on an idle worker.
    fn try_start(&mut self, w: usize) {
        if !self.workers[w].is_idle() {
            return;
        }
        if self.workers[w].target != self.workers[w].current {
            match self.policy.switching() {
                Switching::Instant => {
                    let worker = &mut self.workers[w];
                    worker.current = worker.target;
                    self.k_switches += 1;
                }
                Switching::Reload => {
                    let done = begin_load(&mut self.workers[w], self.latency.load_overhead_s, self.now);
                    self.workers[w].timeout_at = None;
                    self.variant_switches += 1;
                    self.schedule(done, Event::LoadComplete(w));
                    return;
                }
            }
        }
        let bp = self.policy.batch_policy();
        let now = self.now;
        match form_batch(&mut self.workers[w].queue, &bp, now) {
            Some(batch) => {
                let exec = self.workers[w].current;
                let dur = self.exec_time(exec, batch.len(), Some(&batch));
                let worker = &mut self.workers[w];
                worker.status = WorkerStatus::Busy;
                worker.busy_until = now + dur;
                worker.busy_time_s += dur;
                worker.in_flight = batch;
                worker.timeout_at = None;
                self.schedule(now + dur, Event::BatchComplete(w));
            }
            None => {
                if let Some(oldest) = self.workers[w].queue.oldest_enqueue() {
                    let at = (oldest + bp.timeout_s).max(now);
                    if self.workers[w].timeout_at != Some(at) {
                        self.workers[w].timeout_at = Some(at);
                        self.schedule(at, Event::BatchTimeout(w));
                    }
                }
            }
        }
    }

    /// Service time of `b` prompts under `exec`. Per-prompt execution runs a
    /// batch at its slowest member's K.
    fn exec_time(&self, exec: Execution, b: usize, batch: Option<&[Queued]>) -> f64 {
        let steps = match exec {
            Execution::Approx(k) => self.grid.remaining_steps(k),
            Execution::Variant(v) => self.ladder[v].steps,
            Execution::PerPrompt => batch
                .into_iter()
                .flatten()
                .map(|q| self.grid.remaining_steps(q.prompt.optimal_k.unwrap_or(KLevel::VANILLA)))
                .max()
                .unwrap_or(self.grid.total_steps()),
        };
        self.latency.batch_time(steps, b)
    }

    fn on_batch_complete(&mut self, w: usize) {
        let batch = std::mem::take(&mut self.workers[w].in_flight);
        let exec = self.workers[w].current;
        let b = batch.len();
        for q in batch {
            let optimal = q.prompt.optimal_k.unwrap_or(KLevel::VANILLA);
            let (executed_k, executed, quality) = match exec {
                Execution::Approx(k) => (k.0, format!("k{k}"), self.quality.quality(k, optimal)),
                Execution::Variant(v) => {
                    let var = &self.ladder[v];
                    let k = self.grid.total_steps().saturating_sub(var.steps);
                    (k, var.name.clone(), var.quality)
                }
                Execution::PerPrompt => (optimal.0, format!("k{optimal}"), self.quality.quality(optimal, optimal)),
            };
            // Only a full generation leaves an intermediate state worth caching.
            if executed_k == 0 {
                self.cache.insert(q.prompt.embedding);
            }
            self.records.push(CompletionRecord {
                prompt_id: q.prompt.id,
                arrival_s: q.prompt.arrival_s,
                completion_s: self.now,
                executed_k,
                executed,
                optimal_k: optimal.0,
                quality,
                batch_size: b,
                worker: w,
            });
        }
        self.workers[w].status = WorkerStatus::Idle;
        self.try_start(w);
    }

    fn finish(self) -> MetricsLog {
        MetricsLog {
            policy: self.policy.name().to_string(),
            seed: self.seed,
            duration_s: self.duration_s,
            instances: self.workers.len() as u32,
            slo_s: self.slo_s,
            level_labels: self.policy.level_labels(),
            arrivals: self.arrival_times.len(),
            records: self.records,
            occupancy: self.occupancy,
            loading_time_s: self.workers.iter().map(|w| w.loading_time_s).sum(),
            variant_switches: self.variant_switches,
            k_switches: self.k_switches,
            busy_time_s: self.workers.iter().map(|w| w.busy_time_s).collect(),
        }
    }
}
