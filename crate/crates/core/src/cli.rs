//! Experiment harness: `run`, `compare`, `plan`, and `sweep`.
//!
//! Exit codes: 0 success, 1 failed `--assert-ordering`, 2 invalid input
//! (config, histogram, grid), 3 runtime failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use promptsched::config::Config;
use promptsched::controller::{decide, plan_routes, window_prediction_error, ControllerSettings, LoadMode};
use promptsched::domain::{Histogram, KGrid, KLevel, RoutePlan};
use promptsched::metrics::{
    summarize, window_series, write_records_csv, write_summary_csv, write_window_csv, RunSummary,
};
use promptsched::policy::POLICY_NAMES;
use promptsched::Error;

const OUT_ENV: &str = "PROMPTSCHED_OUT";

#[derive(Parser)]
#[command(
    name = "promptsched",
    version,
    about = "Prompt-aware scheduling simulator for text-to-image serving"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy on one seed and write metrics.
    Run(RunArgs),
    /// Run several policies over several seeds and tabulate summaries.
    Compare(CompareArgs),
    /// Print one controller decision for a given load and optimal-K mix.
    Plan(PlanArgs),
    /// Evaluate forecaster error or solver time over a parameter grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set workload.peak_rate_rps=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $PROMPTSCHED_OUT/<policy>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = POLICY_NAMES.map(String::from))]
    policies: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail (exit 1) unless the expected policy ordering holds on the means.
    #[arg(long)]
    assert_ordering: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Arrival rate, requests/s.
    #[arg(long)]
    lambda: f64,
    /// Optimal-K mix as `K:mass,...`, e.g. `0:0.5,25:0.5`.
    #[arg(long)]
    hk: String,
    /// Skip the assignment and plan routes against these load fractions.
    #[arg(long)]
    fractions: Option<String>,
    #[arg(long)]
    gpus: Option<u32>,
    /// Also write the decision to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SweepParam {
    /// Forecaster window size W.
    Window,
    /// Cluster size N.
    Gpus,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',')]
    values: Vec<u64>,
    /// Independent trials per point.
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Assertion(String),
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Assertion(_) => 1,
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidHistogram(_) | Error::InvalidGrid(_) | Error::UnknownPolicy(_) => {
                Failure::Input(e.into())
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Assertion(msg) => eprintln!("ordering check failed: {msg}"),
                Failure::Input(e) | Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn load_config(args: &ConfigArgs, extra: &[String]) -> CliResult<Config> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Input)?,
        None => String::new(),
    };
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra);
    Ok(Config::from_toml_with_overrides(&text, &overrides)?)
}

fn output_dir(explicit: Option<PathBuf>, default_name: &str) -> CliResult<PathBuf> {
    let dir = explicit.unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"))
            .join(default_name)
    });
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> CliResult<fs::File> {
    Ok(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    policy: &'a str,
    seed: u64,
    config_sha256: String,
    config_file: &'static str,
    outputs: &'a [&'a str],
}

// ── run ─────────────────────────────────────────────────────────────────────

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let mut extra = Vec::new();
    if let Some(p) = &args.policy {
        extra.push(format!("policy=\"{p}\""));
    }
    if let Some(s) = args.seed {
        extra.push(format!("seed={s}"));
    }
    let cfg = load_config(&args.config, &extra)?;
    let dir = output_dir(args.out, &format!("{}-seed{}", cfg.policy, cfg.seed))?;

    let log = promptsched::simulate(&cfg)?;
    let summary = summarize(&log, cfg.metrics.window_s, cfg.cluster.price_per_gpu_hour)?;
    let series = window_series(&log, cfg.metrics.window_s);

    write_window_csv(create(&dir.join("metrics.csv"))?, &log.level_labels, &series)?;
    write_summary_csv(create(&dir.join("summary.csv"))?, std::slice::from_ref(&summary))?;
    write_records_csv(create(&dir.join("completions.csv"))?, &log.records)?;
    let config_text = cfg.to_toml_string();
    fs::write(dir.join("config.toml"), &config_text).context("writing config snapshot")?;
    let manifest = Manifest {
        tool: "promptsched",
        version: env!("CARGO_PKG_VERSION"),
        policy: &cfg.policy,
        seed: cfg.seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
        config_file: "config.toml",
        outputs: &["metrics.csv", "summary.csv", "completions.csv"],
    };
    let json = serde_json::to_string_pretty(&manifest).context("encoding manifest")?;
    fs::write(dir.join("manifest.json"), json + "\n").context("writing manifest")?;

    println!(
        "{} seed={} quality={:.4} throughput={:.4} slo_ratio={:.4} load_s={:.1} -> {}",
        summary.policy,
        summary.seed,
        summary.mean_quality,
        summary.throughput,
        summary.slo_ratio,
        summary.load_seconds,
        dir.display()
    );
    Ok(())
}

// ── compare ─────────────────────────────────────────────────────────────────

fn mean_row(policy: &str, rows: &[&RunSummary]) -> RunSummary {
    let n = rows.len() as f64;
    let avg = |f: fn(&RunSummary) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    RunSummary {
        policy: policy.to_string(),
        seed: 0,
        mean_quality: avg(|r| r.mean_quality),
        throughput: avg(|r| r.throughput),
        slo_ratio: avg(|r| r.slo_ratio),
        max_drop: avg(|r| r.max_drop),
        quality_per_dollar: avg(|r| r.quality_per_dollar),
        quality_per_dollar_rel: avg(|r| r.quality_per_dollar_rel),
        load_seconds: avg(|r| r.load_seconds),
        arrivals: (rows.iter().map(|r| r.arrivals).sum::<usize>() as f64 / n).round() as usize,
        completions: (rows.iter().map(|r| r.completions).sum::<usize>() as f64 / n).round() as usize,
    }
}

const COMPARE_HEADER: [&str; 11] = [
    "policy",
    "seed",
    "mean_quality",
    "throughput",
    "slo_ratio",
    "max_drop",
    "quality_per_dollar",
    "quality_per_dollar_rel",
    "load_seconds",
    "arrivals",
    "completions",
];

fn compare_row(r: &RunSummary, seed: &str) -> Vec<String> {
    vec![
        r.policy.clone(),
        seed.to_string(),
        format!("{:.6}", r.mean_quality),
        format!("{:.6}", r.throughput),
        format!("{:.6}", r.slo_ratio),
        format!("{:.6}", r.max_drop),
        format!("{:.6}", r.quality_per_dollar),
        format!("{:.6}", r.quality_per_dollar_rel),
        format!("{:.3}", r.load_seconds),
        r.arrivals.to_string(),
        r.completions.to_string(),
    ]
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Checks the expected directional ordering on per-policy means.
fn check_ordering(means: &[RunSummary]) -> std::result::Result<(), String> {
    let get = |name: &str| {
        means
            .iter()
            .find(|m| m.policy == name)
            .ok_or_else(|| format!("--assert-ordering needs policy {name}"))
    };
    let acs = get("acs")?;
    let ha = get("clipper-ha")?;
    let ht = get("clipper-ht")?;
    let nirvana = get("nirvana")?;
    let proteus = get("proteus")?;
    let mut failed = Vec::new();
    for other in [ha, ht, nirvana, proteus] {
        if acs.slo_ratio >= other.slo_ratio {
            failed.push(format!(
                "acs slo_ratio {:.4} not below {} {:.4}",
                acs.slo_ratio, other.policy, other.slo_ratio
            ));
        }
    }
    for other in [ht, proteus] {
        if acs.mean_quality <= other.mean_quality {
            failed.push(format!(
                "acs quality {:.4} not above {} {:.4}",
                acs.mean_quality, other.policy, other.mean_quality
            ));
        }
    }
    if acs.throughput < 1.2 * ha.throughput {
        failed.push(format!(
            "acs throughput {:.4} below 1.2 x clipper-ha {:.4}",
            acs.throughput, ha.throughput
        ));
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(failed.join("; "))
    }
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    if args.policies.len() < 2 {
        return Err(Failure::Input(anyhow!("compare needs at least two policies")));
    }
    if args.seeds.is_empty() {
        return Err(Failure::Input(anyhow!("compare needs at least one seed")));
    }
    let base = load_config(&args.config, &[])?;
    let mut points = Vec::new();
    for p in &args.policies {
        for &s in &args.seeds {
            let cfg = load_config(&args.config, &[format!("policy=\"{p}\""), format!("seed={s}")])?;
            points.push(cfg);
        }
    }
    let dir = output_dir(args.out, "compare")?;

    let results: Vec<promptsched::Result<RunSummary>> = points
        .par_iter()
        .map(|cfg| {
            let log = promptsched::simulate(cfg)?;
            summarize(&log, cfg.metrics.window_s, cfg.cluster.price_per_gpu_hour)
        })
        .collect();
    let mut rows = results.into_iter().collect::<promptsched::Result<Vec<_>>>()?;

    let reference = if args.policies.iter().any(|p| p == "acs") {
        "acs".to_string()
    } else {
        args.policies[0].clone()
    };
    for &seed in &args.seeds {
        let ref_qpd = rows
            .iter()
            .find(|r| r.policy == reference && r.seed == seed)
            .map(|r| r.quality_per_dollar)
            .unwrap_or(f64::NAN);
        for r in rows.iter_mut().filter(|r| r.seed == seed) {
            r.quality_per_dollar_rel = r.quality_per_dollar / ref_qpd;
        }
    }

    let means: Vec<RunSummary> = args
        .policies
        .iter()
        .map(|p| mean_row(p, &rows.iter().filter(|r| &r.policy == p).collect::<Vec<_>>()))
        .collect();

    let mut table = vec![COMPARE_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    table.extend(rows.iter().map(|r| compare_row(r, &r.seed.to_string())));
    table.extend(means.iter().map(|r| compare_row(r, "mean")));

    let mut w = csv::Writer::from_writer(create(&dir.join("compare.csv"))?);
    for row in &table {
        w.write_record(row).context("writing compare.csv")?;
    }
    w.flush().context("writing compare.csv")?;
    write_summary_csv(create(&dir.join("summary.csv"))?, &means)?;
    fs::write(dir.join("config.toml"), base.to_toml_string()).context("writing config snapshot")?;
    let text = aligned(&table);
    fs::write(dir.join("compare.txt"), &text).context("writing compare.txt")?;
    print!("{text}");

    if args.assert_ordering {
        check_ordering(&means).map_err(Failure::Assertion)?;
        println!("ordering: ok");
    }
    Ok(())
}

// ── plan ────────────────────────────────────────────────────────────────────

fn parse_histogram(text: &str, grid: &KGrid) -> CliResult<Histogram> {
    let mut mass = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, m) = part
            .split_once(':')
            .ok_or_else(|| Failure::Input(anyhow!("expected K:mass, got {part:?}")))?;
        let k: u32 = k
            .trim()
            .parse()
            .map_err(|_| Failure::Input(anyhow!("bad level {k:?}")))?;
        let m: f64 = m
            .trim()
            .parse()
            .map_err(|_| Failure::Input(anyhow!("bad mass {m:?}")))?;
        mass.push((KLevel(k), m));
    }
    let h = Histogram::new(mass)?;
    if !h.keys_within(grid) {
        return Err(Error::InvalidHistogram(format!("levels outside the grid {:?}", grid.levels())).into());
    }
    Ok(h)
}

fn format_plan(grid: &KGrid, plan: &RoutePlan) -> String {
    let mut rows = vec![std::iter::once("K\\K'".to_string())
        .chain(grid.levels().iter().map(|k| k.to_string()))
        .collect::<Vec<_>>()];
    for &from in grid.levels() {
        let mut row = vec![from.to_string()];
        row.extend(grid.levels().iter().map(|&to| format!("{:.4}", plan.prob(from, to))));
        rows.push(row);
    }
    aligned(&rows)
}

fn cmd_plan(args: PlanArgs) -> CliResult<()> {
    let mut extra = Vec::new();
    if let Some(n) = args.gpus {
        extra.push(format!("cluster.gpus={n}"));
    }
    let cfg = load_config(&args.config, &extra)?;
    if !(args.lambda >= 0.0 && args.lambda.is_finite()) {
        return Err(Failure::Input(anyhow!("lambda must be a finite non-negative rate")));
    }
    let grid = cfg.grid();
    let hk = parse_histogram(&args.hk, &grid)?;
    let settings = ControllerSettings::from_config(&cfg);

    let mut out = String::new();
    match &args.fractions {
        Some(f) => {
            let f = parse_histogram(f, &grid)?;
            let routes = plan_routes(&hk, &f, &cfg.quality, &grid)?;
            let _ = writeln!(out, "H_K: {}", hist_line(&grid, &hk));
            let _ = writeln!(out, "F: {}", hist_line(&grid, &f));
            let _ = writeln!(out, "route plan P(K'|K):");
            out.push_str(&format_plan(&grid, &routes.plan));
            let _ = writeln!(out, "D_Q: {:.6}", routes.degradation);
        }
        None => {
            let d = decide(&hk, args.lambda, LoadMode::Low, 0.0, &settings)?;
            let _ = writeln!(out, "lambda_rps: {}", args.lambda);
            let _ = writeln!(out, "H_K: {}", hist_line(&grid, &hk));
            let counts: Vec<String> = grid
                .levels()
                .iter()
                .map(|&k| format!("{k}:{}", d.assignment.count(k)))
                .collect();
            let _ = writeln!(out, "assignment: {}", counts.join(","));
            let _ = writeln!(out, "served_fraction: {:.6}", d.assignment.served_fraction);
            let _ = writeln!(out, "F: {}", hist_line(&grid, &d.assignment.fractions));
            let _ = writeln!(out, "route plan P(K'|K):");
            out.push_str(&format_plan(&grid, &d.route_plan));
            let _ = writeln!(out, "D_Q: {:.6}", d.degradation);
            let _ = writeln!(out, "utilization: {:.6}", d.utilization);
            let _ = writeln!(
                out,
                "load_mode: {}",
                match d.load_mode {
                    LoadMode::Low => "low",
                    LoadMode::High => "high",
                }
            );
        }
    }
    print!("{out}");
    if let Some(path) = args.out {
        fs::write(&path, &out).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn hist_line(grid: &KGrid, h: &Histogram) -> String {
    grid.levels()
        .iter()
        .map(|&k| format!("{k}:{:.4}", h.get(k)))
        .collect::<Vec<_>>()
        .join(",")
}

// ── sweep ───────────────────────────────────────────────────────────────────

/// Forecast target for the window sweep: mass decreasing linearly in K.
fn sweep_truth(grid: &KGrid) -> Histogram {
    let n = grid.len();
    let total = (n * (n + 1) / 2) as f64;
    Histogram::new(
        grid.levels()
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, (n - i) as f64 / total)),
    )
    .expect("normalized by construction")
}

fn solver_ms(cfg: &Config, gpus: u32, trials: usize) -> promptsched::Result<f64> {
    let mut settings = ControllerSettings::from_config(cfg);
    settings.instances = gpus;
    let grid = settings.grid.clone();
    let hk = Histogram::uniform(&grid);
    // Offered load that forces a mixed assignment.
    let mid = grid.levels()[grid.len() / 2];
    let lambda = gpus as f64 * settings.latency.max_batch_rate(grid.remaining_steps(mid));
    let mut worst: f64 = 0.0;
    for _ in 0..trials.max(1) {
        let start = Instant::now();
        decide(&hk, lambda, LoadMode::Low, 0.0, &settings)?;
        worst = worst.max(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(worst)
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    if args.values.is_empty() {
        return Err(Failure::Input(anyhow!("sweep needs at least one value")));
    }
    if args.values.contains(&0) {
        return Err(Failure::Input(anyhow!("sweep values must be positive")));
    }
    let cfg = load_config(&args.config, &[])?;
    let grid = cfg.grid();
    let truth = sweep_truth(&grid);
    let (name, header) = match args.param {
        SweepParam::Window => ("window", "l2_error"),
        SweepParam::Gpus => ("gpus", "solver_ms"),
    };
    let results: Vec<promptsched::Result<f64>> = args
        .values
        .par_iter()
        .map(|&v| match args.param {
            SweepParam::Window => window_prediction_error(&truth, &grid, v as usize, args.trials, cfg.seed),
            SweepParam::Gpus => solver_ms(&cfg, v as u32, args.trials),
        })
        .collect();
    let values = results.into_iter().collect::<promptsched::Result<Vec<_>>>()?;

    let dir = output_dir(args.out, &format!("sweep-{name}"))?;
    let mut w = csv::Writer::from_writer(create(&dir.join("sweep.csv"))?);
    w.write_record(["param", "value", "trials", header])
        .context("writing sweep.csv")?;
    let mut table = vec![vec![
        "param".to_string(),
        "value".into(),
        "trials".into(),
        header.into(),
    ]];
    for (&v, m) in args.values.iter().zip(&values) {
        let row = vec![
            name.to_string(),
            v.to_string(),
            args.trials.to_string(),
            format!("{m:.6}"),
        ];
        w.write_record(&row).context("writing sweep.csv")?;
        table.push(row);
    }
    w.flush().context("writing sweep.csv")?;
    print!("{}", aligned(&table));
    Ok(())
}
