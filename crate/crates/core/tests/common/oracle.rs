//! 3-function, 10-invocation fixture shared by the oracle and acceptance
//! tests. Both policies use a 1000 ms boot delay and a 5 ms dispatch
//! overhead. The expected timelines in `fixtures/oracle` were worked out by
//! hand before the simulator existed.

use faas_sim::cluster::{ClusterShape, CostModel, DelayDist};
use faas_sim::policy::PolicyConfig;
use faas_sim::sim::{SimOptions, SimOutcome, Simulation};
use faas_sim::trace::{InvocationPlan, PlanFunction};

const INVOCATIONS: [(&str, u64, u64); 10] = [
    ("a", 0, 500),
    ("a", 200, 300),
    ("b", 1000, 100),
    ("a", 2000, 400),
    ("c", 2500, 1000),
    ("b", 3000, 200),
    ("a", 3600, 100),
    ("c", 5000, 100),
    ("b", 40000, 100),
    ("a", 70000, 100),
];

pub fn plan() -> InvocationPlan {
    let functions = ["a", "b", "c"].map(|id| PlanFunction { id: id.into(), memory_mb: 128 }).to_vec();
    let entries = INVOCATIONS.iter().map(|&(f, t, d)| (f.to_owned(), t, d));
    InvocationPlan::from_entries(functions, entries, 120_000, 0).unwrap()
}

pub fn simulate(policy: PolicyConfig) -> SimOutcome {
    let mut cost = CostModel::knative_like();
    cost.creation_delay_ms = DelayDist::Deterministic { value: 1000 };
    cost.warm_path_overhead_ms = DelayDist::Deterministic { value: 5 };
    let shape = ClusterShape { nodes: 1, cores_per_node: 4, memory_mb_per_node: 4096 };
    let options = SimOptions { record_event_log: true, check_invariants: true, ..SimOptions::default() };
    let plan = plan();
    Simulation::new(&plan, policy, shape, cost, 1, options).run().unwrap()
}

/// Request and instance events of the log as `time kind subject`.
pub fn timeline(out: &SimOutcome) -> Vec<String> {
    out.event_log
        .as_ref()
        .unwrap()
        .iter()
        .filter(|e| !e.kind.is_periodic())
        .map(|e| format!("{} {:?} {}", e.time_ms, e.kind, e.subject))
        .collect()
}

pub fn lines(s: &str) -> Vec<String> {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect()
}

pub fn dispatch_and_completion(out: &SimOutcome) -> Vec<(u64, u64)> {
    out.records.iter().map(|r| (r.dispatch_ms, r.completion_ms)).collect()
}

pub fn spans(out: &SimOutcome) -> Vec<(u32, u64, Option<u64>, Option<u64>)> {
    out.instances.iter().map(|s| (s.function, s.created_ms, s.ready_ms, s.terminated_ms)).collect()
}

pub fn sync_policy() -> PolicyConfig {
    PolicyConfig::sync(30_000)
}

pub fn async_policy() -> PolicyConfig {
    PolicyConfig::AsyncWindow {
        window_ms: 10_000,
        utilization_target: 1.0,
        container_concurrency: 1,
        evaluation_period_ms: 2_000,
        sample_period_ms: 1_000,
    }
}

pub fn expected_sync_timeline() -> Vec<String> {
    lines(include_str!("../fixtures/oracle/sync_timeline.txt"))
}

pub fn expected_async_timeline() -> Vec<String> {
    lines(include_str!("../fixtures/oracle/async_timeline.txt"))
}
