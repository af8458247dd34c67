//! Wiring from a config to a finished report: workload preparation, single
//! runs, parameter sweeps and the large-scale mode.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::cluster::ClusterShape;
use crate::config::{ConfigError, CostConfig, ExperimentConfig, SweepSpec, WorkloadConfig, WorkloadSource};
use crate::engine::{derive_seed, LogEntry};
use crate::metrics::{build_report, export_all, write_summary_csv, ExperimentReport, ReportInputs, Window};
use crate::policy::PolicyConfig;
use crate::sim::{SimError, SimOptions, SimOutcome, Simulation};
use crate::trace::{
    gen_synthetic_trace, generate_invocations, parse_trace, sample_functions, CountProcess, FunctionProfile,
    InvocationPlan, SyntheticSpec, TraceError, ValueDist,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("workload: {0}")]
    Workload(#[from] TraceError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("invariant check after run: {0}")]
    Invariant(String),
    #[error("writing outputs: {0}")]
    Io(#[from] std::io::Error),
}

/// Debug and verification switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub event_log: bool,
    pub usage_trace: bool,
    /// Full consistency check after every event instead of once per
    /// metrics sample.
    pub check_every_event: bool,
}

impl RunOptions {
    fn sim_options(&self) -> SimOptions {
        SimOptions {
            record_event_log: self.event_log,
            record_usage_trace: self.usage_trace,
            check_invariants: self.check_every_event,
            ..SimOptions::default()
        }
    }
}

/// Function profiles for a workload, sampled down to `sample_k` if set.
pub fn load_profiles(workload: &WorkloadConfig, seed: u64, base_dir: &Path) -> Result<Vec<FunctionProfile>, HarnessError> {
    let profiles = match workload.source(base_dir)? {
        WorkloadSource::Trace(paths) => parse_trace(&paths)?,
        WorkloadSource::Synthetic(spec) => gen_synthetic_trace(spec, derive_seed(seed, "workload"))?,
    };
    Ok(match workload.sample_k {
        Some(k) => sample_functions(&profiles, k, derive_seed(seed, "sample"))?,
        None => profiles,
    })
}

pub fn build_plan(config: &ExperimentConfig, base_dir: &Path) -> Result<InvocationPlan, HarnessError> {
    let profiles = load_profiles(&config.workload, config.seed, base_dir)?;
    let w = &config.workload;
    Ok(generate_invocations(&profiles, w.experiment_minutes, w.warmup_minutes, config.seed)?)
}

/// Result of simulating one config against a plan.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub outcome: SimOutcome,
    pub wall_clock: Duration,
}

/// Runs `config` on a prepared plan with simulation seed `seed`.
pub fn simulate(
    config: &ExperimentConfig,
    plan: &InvocationPlan,
    seed: u64,
    options: RunOptions,
) -> Result<ExperimentRun, HarnessError> {
    let started = Instant::now();
    let cost = config.cost.resolve()?;
    let sim = Simulation::new(plan, config.policy.clone(), config.cluster, cost, seed, options.sim_options());
    let outcome = sim.run()?;
    verify_outcome(plan, &outcome)?;

    let function_ids: Vec<String> = plan.functions.iter().map(|f| f.id.clone()).collect();
    let mut echo = config.clone();
    echo.seed = seed;
    let report = build_report(ReportInputs {
        policy: config.policy.name(),
        seed,
        function_ids: &function_ids,
        records: &outcome.records,
        window: Window { start_ms: plan.warmup_cutoff_ms, end_ms: plan.total_duration_ms },
        window_start: &outcome.window_start,
        window_end: &outcome.window_end,
        peak_node_utilization: outcome.peak_node_utilization,
        events_processed: outcome.events_processed,
        plan_checksum: plan.checksum(),
        config: serde_json::to_value(&echo).expect("config serializes"),
    });
    let wall_clock = started.elapsed();
    log::info!(
        "{} seed={} events={} wall={:.2?}",
        report.policy,
        seed,
        report.events_processed,
        wall_clock
    );
    Ok(ExperimentRun { report, outcome, wall_clock })
}

/// Conservation and accounting checks over a finished run.
pub fn verify_outcome(plan: &InvocationPlan, outcome: &SimOutcome) -> Result<(), HarnessError> {
    if outcome.records.len() != plan.len() {
        return Err(HarnessError::Invariant("record count differs from the plan".into()));
    }
    for (i, r) in outcome.records.iter().enumerate() {
        if !(r.arrival_ms <= r.dispatch_ms && r.dispatch_ms + r.expected_duration_ms == r.completion_ms) {
            return Err(HarnessError::Invariant(format!("request {i} has inconsistent timestamps {r:?}")));
        }
    }
    let fin = &outcome.final_sample;
    let work: u64 = outcome.records.iter().map(|r| r.expected_duration_ms).sum();
    if work != fin.function_work_cpu_ms {
        return Err(HarnessError::Invariant(format!(
            "function work {} ms booked, {} ms completed",
            fin.function_work_cpu_ms, work
        )));
    }
    if fin.busy_instance_memory_mb != 0 {
        return Err(HarnessError::Invariant("instances still busy after the last completion".into()));
    }
    Ok(())
}

/// Output file stem: `{policy}_{axes...}_{seed}`.
pub fn file_stem(policy: &str, label: &str, seed: u64) -> String {
    if label.is_empty() {
        format!("{policy}_{seed}")
    } else {
        format!("{policy}_{label}_{seed}")
    }
}

pub fn write_event_log(entries: &[LogEntry], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "time_ms,seq,kind,subject")?;
    for e in entries {
        writeln!(f, "{e}")?;
    }
    f.flush()
}

fn write_outputs(run: &ExperimentRun, out_dir: &Path, stem: &str) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let mut paths = export_all(&run.report, out_dir, stem)?;
    if let Some(log) = &run.outcome.event_log {
        let p = out_dir.join(format!("{stem}_events.csv"));
        write_event_log(log, &p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Loads the workload, runs one experiment and writes its outputs.
pub fn run_experiment(
    config: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
    options: RunOptions,
) -> Result<(ExperimentRun, Vec<PathBuf>), HarnessError> {
    let plan = build_plan(config, base_dir)?;
    let run = simulate(config, &plan, config.seed, options)?;
    let paths = write_outputs(&run, out_dir, &file_stem(config.policy.name(), "", config.seed))?;
    Ok((run, paths))
}

#[derive(Debug)]
pub struct PointResult {
    pub index: usize,
    pub label: String,
    pub seed: u64,
    pub outcome: Result<ExperimentRun, HarnessError>,
}

#[derive(Debug)]
pub struct SweepResult {
    pub points: Vec<PointResult>,
    pub summary_path: PathBuf,
    pub plan_checksum: String,
}

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.outcome.is_err()).count()
    }

    pub fn reports(&self) -> impl Iterator<Item = &ExperimentReport> {
        self.points.iter().filter_map(|p| p.outcome.as_ref().ok()).map(|r| &r.report)
    }
}

/// Seed of a sweep point. It depends only on the master seed and the
/// point's axis assignments, so adding values to an axis leaves the seeds
/// of existing points unchanged. A sweep without axes keeps the master seed.
pub fn point_seed(master: u64, label: &str) -> u64 {
    if label.is_empty() {
        return master;
    }
    derive_seed(master, label)
}

/// Runs every point of the cross product against one shared plan.
pub fn run_sweep(
    spec: &SweepSpec,
    out_dir: &Path,
    parallelism: Option<usize>,
    options: RunOptions,
) -> Result<SweepResult, HarnessError> {
    let points = spec.points()?;
    log::info!("sweep: {} points", points.len());
    let plan = build_plan(&spec.base_config, &spec.base_dir)?;
    let master = spec.base_config.seed;
    fs::create_dir_all(out_dir)?;

    let threads = parallelism.or(spec.parallelism).unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let results: Vec<PointResult> = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let label = p.label();
                let seed = if spec.common_random_numbers { master } else { point_seed(master, &label) };
                let outcome = simulate(&p.config, &plan, seed, options).and_then(|run| {
                    write_outputs(&run, out_dir, &file_stem(p.config.policy.name(), &label, seed))?;
                    Ok(run)
                });
                if let Err(e) = &outcome {
                    log::error!("point {} ({label}) failed: {e}", p.index);
                }
                PointResult { index: p.index, label, seed, outcome }
            })
            .collect()
    });

    let summary_path = out_dir.join("sweep_summary.csv");
    write_summary_csv(results.iter().filter_map(|p| p.outcome.as_ref().ok()).map(|r| &r.report), &summary_path)?;
    Ok(SweepResult { points: results, summary_path, plan_checksum: plan.checksum() })
}

/// Built-in large-scale configuration: 50 nodes and a 2000-function
/// synthetic workload of roughly 3.5 million invocations.
pub fn scale_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        output_dir: None,
        cluster: ClusterShape { nodes: 50, cores_per_node: 10, memory_mb_per_node: 65_536 },
        cost: CostConfig::default(),
        policy: PolicyConfig::sync(600_000),
        workload: WorkloadConfig {
            trace_dir: None,
            trace: None,
            synthetic: Some(SyntheticSpec {
                num_functions: 2000,
                minutes: 80,
                rate_per_minute: ValueDist::LogNormal { mean: 21.875, sigma: 1.5 },
                duration_ms: ValueDist::LogNormal { mean: 60.0, sigma: 0.8 },
                memory_mb: ValueDist::LogNormal { mean: 170.0, sigma: 0.5 },
                counts: CountProcess::Poisson,
                timer_fraction: 0.2,
                timer_period_minutes: None,
            }),
            sample_k: None,
            experiment_minutes: 80,
            warmup_minutes: 40,
        },
    }
}

/// Runs the large-scale mode with invariant checks at every metrics sample.
pub fn scale_mode(
    config: &ExperimentConfig,
    base_dir: &Path,
    out_dir: &Path,
    options: RunOptions,
) -> Result<(ExperimentRun, Vec<PathBuf>), HarnessError> {
    let (run, paths) = run_experiment(config, base_dir, out_dir, options)?;
    log::info!(
        "scale run: {} invocations, {} events, peak node utilization {:.2}, {:.1?}",
        run.report.total_invocations,
        run.report.events_processed,
        run.report.peak_node_utilization,
        run.wall_clock
    );
    Ok((run, paths))
}
