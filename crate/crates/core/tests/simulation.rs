mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;

use promptsched::controller::LoadMode;
use promptsched::dispatcher::{form_batch, BatchPolicy, WorkerQueue};
use promptsched::metrics::{mean_quality, MetricsLog};
use promptsched::policy::POLICY_NAMES;
use promptsched::workload::TraceKind;
use promptsched::{simulate, Config, Prompt};

fn scenario(name: &str) -> Config {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"));
    Config::from_toml_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn small(policy: &str, seed: u64, rate: f64, duration: f64) -> Config {
    let mut cfg = Config {
        policy: policy.into(),
        seed,
        ..Config::default()
    };
    cfg.cluster.gpus = 4;
    cfg.workload.kind = TraceKind::SteadyPoisson;
    cfg.workload.base_rate_rps = rate;
    cfg.workload.peak_rate_rps = rate;
    cfg.workload.duration_s = duration;
    cfg
}

/// Every arrival completes exactly once.
fn assert_conserved(log: &MetricsLog) {
    assert_eq!(log.records.len(), log.arrivals, "{}", log.policy);
    let mut ids: Vec<u64> = log.records.iter().map(|r| r.prompt_id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), log.arrivals, "{}: duplicate completions", log.policy);
}

/// Records sharing a worker and completion time form one batch. Its wall
/// time is set by the member that skips the fewest steps.
fn batches(log: &MetricsLog) -> BTreeMap<(usize, u64), Vec<&promptsched::metrics::CompletionRecord>> {
    let mut out: BTreeMap<(usize, u64), Vec<_>> = BTreeMap::new();
    for r in &log.records {
        out.entry((r.worker, r.completion_s.to_bits())).or_default().push(r);
    }
    out
}

#[test]
fn same_seed_gives_identical_logs() {
    for policy in POLICY_NAMES {
        let cfg = small(policy, 3, 1.5, 400.0);
        assert_eq!(
            simulate(&cfg).unwrap().to_json(),
            simulate(&cfg).unwrap().to_json(),
            "{policy}"
        );
    }
    let a = simulate(&small("acs", 3, 1.5, 400.0)).unwrap();
    let b = simulate(&small("acs", 4, 1.5, 400.0)).unwrap();
    assert_ne!(a.to_json(), b.to_json());
}

#[test]
fn every_policy_conserves_prompts_in_every_scenario() {
    let scenarios = [scenario("overload"), scenario("ramp"), small("acs", 1, 2.0, 600.0)];
    for base in scenarios {
        for policy in POLICY_NAMES {
            let mut cfg = base.clone();
            cfg.policy = policy.into();
            let log = simulate(&cfg).unwrap();
            assert_conserved(&log);
        }
    }
}

#[test]
fn completions_respect_causality_and_busy_time() {
    for policy in POLICY_NAMES {
        let log = simulate(&small(policy, 5, 2.5, 600.0)).unwrap();
        for r in &log.records {
            let floor = r.arrival_s + common::service(r.executed_k, r.batch_size);
            assert!(r.completion_s + 1e-9 >= floor, "{policy}: {r:?}");
        }
        let mut busy = vec![0.0; log.instances as usize];
        for ((worker, _), members) in batches(&log) {
            assert!(members.iter().all(|r| r.batch_size == members.len()), "{policy}");
            let k = members.iter().map(|r| r.executed_k).min().unwrap();
            busy[worker] += common::service(k, members.len());
        }
        for (w, (&got, want)) in log.busy_time_s.iter().zip(busy).enumerate() {
            assert!((got - want).abs() < 1e-6, "{policy} worker {w}: {got} vs {want}");
        }
    }
}

#[test]
fn clipper_ha_and_nirvana_never_lose_quality() {
    for policy in ["clipper-ha", "nirvana"] {
        let log = simulate(&small(policy, 2, 2.0, 600.0)).unwrap();
        assert!(log.records.iter().all(|r| r.quality == 1.0), "{policy}");
        assert_eq!(log.loading_time_s, 0.0);
    }
}

#[test]
fn clipper_ht_degrades_to_the_fast_variant_under_sustained_overload() {
    // Accurate unbatched capacity on 4 GPUs is 0.8 rps; 3 rps stays far above
    // the switching threshold for the whole run.
    let log = simulate(&small("clipper-ht", 8, 3.0, 900.0)).unwrap();
    let late: Vec<_> = log.records.iter().filter(|r| r.arrival_s > 300.0).collect();
    assert!(!late.is_empty());
    assert!(late.iter().all(|r| r.quality == 0.85 && r.executed == "fast"));
    assert!((mean_quality(late.iter().copied()).unwrap() - 0.85).abs() < 1e-12);
    assert!(log.variant_switches >= 4);
    assert_eq!(log.loading_time_s, log.variant_switches as f64 * 20.0);
}

#[test]
fn acs_never_pays_a_load_delay() {
    for cfg in [scenario("overload"), scenario("ramp"), small("acs", 9, 3.0, 600.0)] {
        let log = simulate(&cfg).unwrap();
        assert_eq!(log.policy, "acs");
        assert_eq!(log.loading_time_s, 0.0);
        assert_eq!(log.variant_switches, 0);
    }
}

#[test]
fn acs_quality_follows_the_degradation_curve() {
    let cfg = small("acs", 6, 3.0, 600.0);
    let log = simulate(&cfg).unwrap();
    for r in &log.records {
        let expected = common::quality(r.executed_k, r.optimal_k);
        assert!((r.quality - expected).abs() < 1e-12, "{r:?}");
    }
}

fn prompt(id: u64, t: f64) -> Prompt {
    Prompt {
        id,
        arrival_s: t,
        embedding: vec![1.0],
        cluster: 0,
        optimal_k: None,
        slo_s: 10.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn load_mode_hysteresis(
        start_high in any::<bool>(),
        utils in prop::collection::vec(0.0f64..1.5, 1..40),
    ) {
        let (threshold, band) = (0.8, 0.1);
        let mut mode = if start_high { LoadMode::High } else { LoadMode::Low };
        for u in utils {
            let next = mode.next(u, threshold, band);
            let expected = match mode {
                LoadMode::Low => if u > threshold { LoadMode::High } else { LoadMode::Low },
                LoadMode::High => if u < threshold - band { LoadMode::Low } else { LoadMode::High },
            };
            prop_assert_eq!(next, expected);
            // Inside the band the mode never changes.
            if u >= threshold - band && u <= threshold {
                prop_assert_eq!(next, mode);
            }
            mode = next;
        }
    }

    #[test]
    fn batches_never_exceed_target(
        target in 1usize..=4,
        n in 0usize..12,
        now in 0.0f64..1.0,
    ) {
        let mut q = WorkerQueue::default();
        for i in 0..n {
            q.push(prompt(i as u64, 0.0), 0.0);
        }
        let policy = BatchPolicy { target, timeout_s: 0.25 };
        let mut drained = 0;
        while let Some(batch) = form_batch(&mut q, &policy, now) {
            prop_assert!(!batch.is_empty() && batch.len() <= target);
            // Partial batches only fire after the timeout.
            if batch.len() < target {
                prop_assert!(now >= 0.25 - 1e-9);
            }
            drained += batch.len();
        }
        prop_assert!(drained <= n);
        prop_assert_eq!(q.len(), n - drained);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn random_small_workloads_are_conserved(
        seed in any::<u64>(),
        gpus in 1u32..=6,
        rate in 0.05f64..3.0,
        policy in prop::sample::select(POLICY_NAMES.to_vec()),
    ) {
        let mut cfg = small(policy, seed, rate, 200.0);
        cfg.cluster.gpus = gpus;
        let log = simulate(&cfg).unwrap();
        prop_assert_eq!(log.records.len(), log.arrivals);
        prop_assert!(log.records.iter().all(|r| r.completion_s >= r.arrival_s));
        prop_assert!(log.records.iter().all(|r| r.batch_size >= 1 && r.batch_size <= 4));
    }
}
