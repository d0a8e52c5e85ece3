use proptest::prelude::*;

use promptsched::cache::{select_optimal_k, CacheStore, SimilarityBands};
use promptsched::rng;
use promptsched::workload::{
    gen_arrivals, gen_prompt_stream, prompts_from_trace, read_trace_csv, write_trace_csv, Burst, DriftPoint,
    PopulationSpec, TraceKind, TraceSpec,
};
use promptsched::{Config, KLevel};

fn spec(kind: TraceKind, base: f64, peak: f64, duration: f64, seed: u64) -> TraceSpec {
    TraceSpec {
        kind,
        duration_s: duration,
        base_rate_rps: base,
        peak_rate_rps: peak,
        period_s: duration,
        bursts: Vec::new(),
        seed,
    }
}

fn count_in(ts: &[f64], from: f64, to: f64) -> usize {
    ts.iter().filter(|&&t| t >= from && t < to).count()
}

#[test]
fn steady_poisson_count_and_gaps() {
    let ts = gen_arrivals(&TraceSpec::steady(2.0, 5000.0, 11)).unwrap();
    // Expected 10000 arrivals, standard deviation 100.
    assert!((ts.len() as f64 - 10_000.0).abs() < 400.0, "{}", ts.len());
    let gaps: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
    assert!((mean - 0.5).abs() < 0.02);
    // Exponential gaps have coefficient of variation 1.
    assert!((var.sqrt() / mean - 1.0).abs() < 0.05);
}

#[test]
fn bursts_raise_the_rate_only_inside_their_window() {
    let mut s = spec(TraceKind::Bursty, 1.0, 1.0, 3000.0, 3);
    s.bursts = vec![Burst {
        start_s: 1000.0,
        duration_s: 1000.0,
        rate_rps: 5.0,
    }];
    let ts = gen_arrivals(&s).unwrap();
    let before = count_in(&ts, 0.0, 1000.0) as f64;
    let during = count_in(&ts, 1000.0, 2000.0) as f64;
    let after = count_in(&ts, 2000.0, 3000.0) as f64;
    assert!((before - 1000.0).abs() < 130.0, "{before}");
    assert!((during - 5000.0).abs() < 300.0, "{during}");
    assert!((after - 1000.0).abs() < 130.0, "{after}");
}

#[test]
fn diurnal_peaks_mid_period() {
    let ts = gen_arrivals(&spec(TraceKind::Diurnal, 0.5, 4.5, 4000.0, 5)).unwrap();
    // Rate is base + (peak-base)(1-cos)/2: mean over the middle half is
    // 2.5 + 2/π·2 ≈ 3.77 and over the outer half ≈ 1.23.
    let mid = count_in(&ts, 1000.0, 3000.0) as f64 / 2000.0;
    let outer = (count_in(&ts, 0.0, 1000.0) + count_in(&ts, 3000.0, 4000.0)) as f64 / 2000.0;
    let a = 2.0 * 2.0 / std::f64::consts::PI;
    assert!((mid - (2.5 + a)).abs() < 0.15, "{mid}");
    assert!((outer - (2.5 - a)).abs() < 0.15, "{outer}");
}

#[test]
fn ramp_rate_grows_linearly() {
    let ts = gen_arrivals(&spec(TraceKind::Ramp, 0.0, 6.0, 2000.0, 9)).unwrap();
    let first = count_in(&ts, 0.0, 1000.0) as f64;
    let second = count_in(&ts, 1000.0, 2000.0) as f64;
    // ∫ 6t/2000 over each half: 1500 and 4500.
    assert!((first - 1500.0).abs() < 160.0, "{first}");
    assert!((second - 4500.0).abs() < 270.0, "{second}");
}

#[test]
fn arrivals_depend_only_on_the_seed() {
    let a = gen_arrivals(&TraceSpec::steady(1.0, 500.0, 1)).unwrap();
    let b = gen_arrivals(&TraceSpec::steady(1.0, 500.0, 1)).unwrap();
    let c = gen_arrivals(&TraceSpec::steady(1.0, 500.0, 2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_trace_is_rejected() {
    let mut s = TraceSpec::steady(1.0, 100.0, 1);
    s.duration_s = -1.0;
    assert!(gen_arrivals(&s).is_err());
    let mut s = spec(TraceKind::Bursty, 1.0, 1.0, 100.0, 1);
    s.bursts = vec![Burst {
        start_s: 90.0,
        duration_s: 20.0,
        rate_rps: 2.0,
    }];
    assert!(gen_arrivals(&s).is_err());
}

#[test]
fn zero_noise_population_repeats_the_centroid() {
    let pop = PopulationSpec::single(vec![3.0, 4.0], 0.0);
    let prompts = gen_prompt_stream(&[0.0, 1.0, 2.0], &pop, 1, 10.0);
    for p in prompts {
        assert!((p.embedding[0] - 0.6).abs() < 1e-12);
        assert!((p.embedding[1] - 0.8).abs() < 1e-12);
        assert!(p.optimal_k.is_none());
    }
}

#[test]
fn drift_switches_cluster_mix() {
    let mut cfg = Config::default().workload.population;
    cfg.clusters = 2;
    cfg.cluster_noise = Vec::new();
    cfg.weights = vec![1.0, 0.0];
    cfg.drift = vec![DriftPoint {
        at_s: 50.0,
        weights: vec![0.0, 1.0],
    }];
    let pop = PopulationSpec::from_config(&cfg, 1);
    let times: Vec<f64> = (0..100).map(f64::from).collect();
    let prompts = gen_prompt_stream(&times, &pop, 1, 10.0);
    assert!(prompts[..50].iter().all(|p| p.cluster == 0));
    assert!(prompts[50..].iter().all(|p| p.cluster == 1));
}

#[test]
fn trace_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let cfg = Config::default();
    let pop = cfg.population();
    let times = gen_arrivals(&TraceSpec::steady(1.0, 60.0, 4)).unwrap();
    let prompts = gen_prompt_stream(&times, &pop, 4, 10.0);
    write_trace_csv(&path, &prompts).unwrap();
    let rows = read_trace_csv(&path).unwrap();
    assert_eq!(rows.len(), prompts.len());
    let replayed = prompts_from_trace(&rows, &pop, 4, 10.0).unwrap();
    for (a, b) in prompts.iter().zip(&replayed) {
        assert_eq!(a.arrival_s, b.arrival_s);
        assert_eq!(a.cluster, b.cluster);
    }
}

#[test]
fn replay_rejects_unknown_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    std::fs::write(&path, "timestamp_s,cluster_id\n0.5,99\n").unwrap();
    let rows = read_trace_csv(&path).unwrap();
    assert!(prompts_from_trace(&rows, &Config::default().population(), 1, 10.0).is_err());
}

/// Regression baseline: with 16-dimensional embeddings and noise 0.1, the
/// mean nearest-neighbor similarity measured here is ≈ 0.965.
#[test]
fn same_centroid_queries_hit_closely() {
    let mut r = rng::stream(7, rng::CENTROIDS);
    let centroid = promptsched::workload::random_unit(&mut r, 16);
    let pop = PopulationSpec::single(centroid, 0.1);
    let mut store = CacheStore::new(2000);
    for _ in 0..1000 {
        store.insert(pop.sample_embedding(0, &mut r));
    }
    let n = 500;
    let mean = (0..n)
        .map(|_| store.nearest(&pop.sample_embedding(0, &mut r)).unwrap().0)
        .sum::<f64>()
        / n as f64;
    assert!(mean > 0.9, "mean similarity {mean}");
    assert!(
        (mean - 0.965).abs() < 0.01,
        "mean similarity {mean} drifted from baseline"
    );
}

#[test]
fn default_population_yields_a_mixed_optimal_k() {
    let cfg = Config::default();
    let pop = cfg.population();
    let mut r = rng::stream(cfg.seed, rng::PREWARM);
    let mut store = CacheStore::new(cfg.cache.capacity);
    for _ in 0..cfg.cache.prewarm {
        let c = pop.sample_cluster(0.0, &mut r);
        store.insert(pop.sample_embedding(c, &mut r));
    }
    let bands = SimilarityBands::default();
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..3000 {
        let c = pop.sample_cluster(0.0, &mut r);
        let k = select_optimal_k(store.nearest(&pop.sample_embedding(c, &mut r)).map(|h| h.0), &bands);
        *counts.entry(k).or_insert(0usize) += 1;
    }
    for k in [0, 5, 10, 15, 20, 25] {
        let share = counts.get(&KLevel(k)).copied().unwrap_or(0) as f64 / 3000.0;
        assert!(share > 0.02, "K={k} share {share}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arrivals_sorted_and_in_range(
        seed in any::<u64>(),
        base in 0.0f64..5.0,
        peak in 0.0f64..5.0,
        duration in 1.0f64..500.0,
        kind in prop_oneof![
            Just(TraceKind::SteadyPoisson),
            Just(TraceKind::Diurnal),
            Just(TraceKind::Ramp),
        ],
    ) {
        let (lo, hi) = if base <= peak { (base, peak) } else { (peak, base) };
        let ts = gen_arrivals(&spec(kind, lo, hi, duration, seed)).unwrap();
        prop_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(ts.iter().all(|&t| t >= 0.0 && t <= duration));
    }

    #[test]
    fn cache_never_exceeds_capacity(capacity in 1usize..50, inserts in 0usize..200, seed in any::<u64>()) {
        let mut r = rng::stream(seed, 0);
        let mut store = CacheStore::new(capacity);
        for _ in 0..inserts {
            store.insert(promptsched::workload::random_unit(&mut r, 4));
            prop_assert!(store.len() <= capacity);
        }
        prop_assert_eq!(store.len(), inserts.min(capacity));
    }

    #[test]
    fn optimal_k_is_monotone_in_similarity(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let bands = SimilarityBands::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(select_optimal_k(Some(lo), &bands) <= select_optimal_k(Some(hi), &bands));
    }
}
