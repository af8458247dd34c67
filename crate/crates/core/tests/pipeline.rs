use std::fs;
use std::path::{Path, PathBuf};

use faas_sim::cluster::{ClusterShape, CostModel, DelayDist};
use faas_sim::config::{self, ExperimentConfig};
use faas_sim::harness::{self, RunOptions};
use faas_sim::metrics::{normalized_memory, Window};
use faas_sim::policy::PolicyConfig;
use faas_sim::sim::{SimOptions, SimOutcome, Simulation};
use faas_sim::trace::{InvocationPlan, PlanFunction};
use toml::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn desk(name: &str, overrides: &[(&str, Value)]) -> ExperimentConfig {
    let o: Vec<(String, Value)> = overrides.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    config::load_config_with(&configs().join(name), &o).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let cfg = desk("desk_async.toml", &[("policy.window_ms", Value::Integer(60_000))]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let options = RunOptions { event_log: true, ..RunOptions::default() };
    harness::run_experiment(&cfg, &configs(), a.path(), options).unwrap();
    harness::run_experiment(&cfg, &configs(), b.path(), options).unwrap();
    let fa = files(a.path());
    assert_eq!(fa.len(), 4);
    assert_eq!(fa, files(b.path()));
}

#[test]
fn four_point_sweep_writes_four_rows() {
    let mut spec = config::load_sweep(&configs().join("desk_sync.toml"), &[]).unwrap();
    spec.axes[0].values.truncate(4);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let r = harness::run_sweep(&spec, a.path(), Some(2), RunOptions::default()).unwrap();
    assert_eq!(r.failures(), 0);
    let summary = fs::read_to_string(&r.summary_path).unwrap();
    assert_eq!(summary.lines().count(), 5);
    let reports = files(a.path()).into_iter().filter(|(n, _)| n.ends_with(".json")).count();
    assert_eq!(reports, 4);
    assert!(files(a.path()).iter().any(|(n, _)| n.starts_with("sync-keepalive_keepalive_ms-30000_")));

    let r2 = harness::run_sweep(&spec, b.path(), Some(1), RunOptions::default()).unwrap();
    assert_eq!(summary, fs::read_to_string(&r2.summary_path).unwrap());
}

#[test]
fn zero_invocation_workload_reports_undefined_aggregates() {
    let cfg = desk("desk_sync.toml", &[]);
    let plan = InvocationPlan::from_entries(
        vec![PlanFunction { id: "idle".into(), memory_mb: 128 }],
        Vec::new(),
        cfg.end_ms(),
        cfg.workload.warmup_minutes as u64 * 60_000,
    )
    .unwrap();
    let run = harness::simulate(&cfg, &plan, 1, RunOptions::default()).unwrap();
    let r = &run.report;
    assert_eq!(r.total_invocations, 0);
    assert_eq!(r.slowdown_geomean_p99, None);
    assert_eq!(r.normalized_memory, None);
    assert_eq!(r.cpu_overhead_total, None);
    assert_eq!(r.cold_start_fraction, None);
    assert_eq!(r.creation_rate_per_s, Some(0.0));
    assert_eq!(r.excluded_functions, 1);
    let json = serde_json::to_string(r).unwrap();
    assert!(json.contains("\"slowdown_geomean_p99\":null"));
}

#[test]
fn memory_from_event_trace_matches_snapshot_deltas() {
    for (file, window) in [("desk_sync.toml", "policy.keepalive_ms"), ("desk_async.toml", "policy.window_ms")] {
        let cfg = desk(file, &[(window, Value::Integer(120_000))]);
        let plan = harness::build_plan(&cfg, &configs()).unwrap();
        let options = RunOptions { usage_trace: true, ..RunOptions::default() };
        let run = harness::simulate(&cfg, &plan, cfg.seed, options).unwrap();
        let trace = run.outcome.usage_trace.as_ref().unwrap();
        let w = Window { start_ms: plan.warmup_cutoff_ms, end_ms: plan.total_duration_ms };
        let direct: f64 = normalized_memory(trace, w).unwrap();
        let reported = run.report.normalized_memory.unwrap();
        assert!((direct - reported).abs() < 1e-9 * reported, "{file}: {direct} vs {reported}");
    }
}

#[test]
fn records_are_conserved_and_never_faster_than_unloaded() {
    let cfg = desk("desk_async.toml", &[("policy.window_ms", Value::Integer(30_000))]);
    let plan = harness::build_plan(&cfg, &configs()).unwrap();
    let run = harness::simulate(&cfg, &plan, 7, RunOptions::default()).unwrap();
    assert_eq!(run.outcome.records.len(), plan.len());
    assert!(run.outcome.records.iter().all(|r| r.slowdown::<f64>() >= 1.0));
}

#[test]
fn doubling_cpu_charges_doubles_overhead() {
    let cfg = desk("desk_sync.toml", &[]);
    let plan = harness::build_plan(&cfg, &configs()).unwrap();
    let base = harness::simulate(&cfg, &plan, 3, RunOptions::default()).unwrap().report;
    let mut doubled = cfg.clone();
    let cost = cfg.cost.resolve().unwrap().with_cpu_charges_scaled(2.0);
    let mut table = toml::Table::new();
    for (k, v) in toml::Table::try_from(&cost).unwrap() {
        if k.starts_with("cpu_") || k.ends_with("_per_sec") {
            table.insert(k, v);
        }
    }
    doubled.cost.overrides = table;
    let twice = harness::simulate(&doubled, &plan, 3, RunOptions::default()).unwrap().report;
    let (a, b) = (base.cpu_overhead_total.unwrap(), twice.cpu_overhead_total.unwrap());
    assert!((b - 2.0 * a).abs() < 1e-12 * b, "{a} {b}");
    assert_eq!(base.slowdown_geomean_p99, twice.slowdown_geomean_p99);
}

fn tiny(policy: PolicyConfig, invocations: &[(u64, u64)], end_ms: u64) -> SimOutcome {
    let mut cost = CostModel::knative_like();
    cost.creation_delay_ms = DelayDist::Deterministic { value: 0 };
    cost.warm_path_overhead_ms = DelayDist::Deterministic { value: 0 };
    let plan = InvocationPlan::from_entries(
        vec![PlanFunction { id: "f".into(), memory_mb: 128 }],
        invocations.iter().map(|&(t, d)| ("f".to_owned(), t, d)),
        end_ms,
        0,
    )
    .unwrap();
    let shape = ClusterShape { nodes: 1, cores_per_node: 2, memory_mb_per_node: 1024 };
    let options = SimOptions { check_invariants: true, ..SimOptions::default() };
    Simulation::new(&plan, policy, shape, cost, 1, options).run().unwrap()
}

#[test]
fn keepalive_timer_resets_on_reuse() {
    let out = tiny(PolicyConfig::sync(30_000), &[(0, 1)], 120_000);
    assert_eq!(out.instances[0].terminated_ms, Some(30_001));

    let out = tiny(PolicyConfig::sync(30_000), &[(0, 1), (15_000, 1_000)], 120_000);
    assert_eq!(out.instances.len(), 1);
    assert_eq!(out.instances[0].terminated_ms, Some(46_000));
}

#[test]
fn long_keepalive_with_regular_reuse_never_terminates() {
    let calls: Vec<(u64, u64)> = (0..40).map(|m| (m * 60_000, 100)).collect();
    let out = tiny(PolicyConfig::sync(1_800_000), &calls, 40 * 60_000);
    assert_eq!(out.instances.len(), 1);
    assert!(out.instances[0].terminated_ms.is_none_or(|t| t > 40 * 60_000));
}

#[test]
fn async_scales_to_zero_after_the_window_drains() {
    let out = tiny(PolicyConfig::async_window(10_000, 1.0, 1), &[(0, 500)], 60_000);
    assert_eq!(out.instances.len(), 1);
    let t = out.instances[0].terminated_ms.expect("instance retired");
    // Boot waits for the first evaluation at 2 s; the window then needs 10 s
    // of zero samples and one more evaluation.
    assert!(t > 12_500 && t <= 14_500, "retired at {t}");
    assert_eq!(out.window_end.live_instances, 0);
}
