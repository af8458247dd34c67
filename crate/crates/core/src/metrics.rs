//! Invocation records, evaluation metrics and report export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::UsageSample;
use crate::engine::TimeMs;
use crate::scalar::Scalar;
use crate::stats::{cdf_points, geometric_mean, nearest_rank, sort_scalars};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("function has no completed invocations in the measurement window")]
    EmptyFunction,
    #[error("slowdown values must be positive, got {0}")]
    NonPositiveSlowdown(f64),
    #[error("busy-instance memory integral is zero over the window")]
    ZeroBusyIntegral,
    #[error("no useful function work over the window")]
    ZeroUsefulWork,
    #[error("empty measurement window")]
    EmptyWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub function: u32,
    pub arrival_ms: TimeMs,
    pub dispatch_ms: TimeMs,
    pub completion_ms: TimeMs,
    pub expected_duration_ms: TimeMs,
    /// The request had to wait for an instance to be created.
    pub cold: bool,
}

impl InvocationRecord {
    pub fn response_time_ms(&self) -> TimeMs {
        self.completion_ms - self.arrival_ms
    }

    pub fn queueing_time_ms(&self) -> TimeMs {
        self.dispatch_ms - self.arrival_ms
    }

    pub fn slowdown<T: Scalar>(&self) -> T {
        T::of_u64(self.response_time_ms()) / T::of_u64(self.expected_duration_ms)
    }
}

/// Measurement window `[start, end]` in virtual time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_ms: TimeMs,
    pub end_ms: TimeMs,
}

impl Window {
    pub fn seconds<T: Scalar>(&self) -> T {
        T::of_u64(self.end_ms.saturating_sub(self.start_ms)) / T::of(1000.0)
    }
}

/// Nearest-rank 99th percentile of the slowdowns of one function.
pub fn per_function_p99<T: Scalar>(records: &[InvocationRecord]) -> Result<T, MetricsError> {
    let mut slowdowns: Vec<T> = records.iter().map(InvocationRecord::slowdown).collect();
    nearest_rank(sort_scalars(&mut slowdowns), T::of(0.99)).ok_or(MetricsError::EmptyFunction)
}

/// Geometric mean of per-function tail slowdowns.
pub fn aggregate_slowdown<T: Scalar>(per_function: &[T]) -> Result<T, MetricsError> {
    if let Some(bad) = per_function.iter().find(|v| !(**v > T::zero())) {
        return Err(MetricsError::NonPositiveSlowdown(bad.to_f64_lossy()));
    }
    geometric_mean(per_function).ok_or(MetricsError::EmptyFunction)
}

/// Step integral of total over busy instance memory across `window`, from
/// samples taken at every state change. Each sample's values hold until
/// the next sample.
pub fn normalized_memory<T: Scalar>(samples: &[UsageSample], window: Window) -> Result<T, MetricsError> {
    if window.end_ms <= window.start_ms {
        return Err(MetricsError::EmptyWindow);
    }
    let (mut total, mut busy) = (0u128, 0u128);
    for (i, s) in samples.iter().enumerate() {
        let next = samples.get(i + 1).map_or(window.end_ms, |n| n.timestamp_ms);
        let lo = s.timestamp_ms.max(window.start_ms);
        let hi = next.min(window.end_ms);
        if hi > lo {
            let dt = u128::from(hi - lo);
            total += u128::from(s.total_instance_memory_mb) * dt;
            busy += u128::from(s.busy_instance_memory_mb) * dt;
        }
    }
    ratio_of_integrals(total, busy)
}

/// Same ratio from two cumulative samples bracketing the window.
pub fn normalized_memory_between<T: Scalar>(start: &UsageSample, end: &UsageSample) -> Result<T, MetricsError> {
    ratio_of_integrals(
        end.total_memory_mb_ms - start.total_memory_mb_ms,
        end.busy_memory_mb_ms - start.busy_memory_mb_ms,
    )
}

fn ratio_of_integrals<T: Scalar>(total: u128, busy: u128) -> Result<T, MetricsError> {
    if busy == 0 {
        return Err(MetricsError::ZeroBusyIntegral);
    }
    Ok(T::of(total as f64) / T::of(busy as f64))
}

/// Creations and teardowns per second between two cumulative samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRates<T> {
    pub creations_per_s: T,
    pub teardowns_per_s: T,
}

pub fn creation_rate<T: Scalar>(start: &UsageSample, end: &UsageSample) -> Result<LifecycleRates<T>, MetricsError> {
    let window = Window { start_ms: start.timestamp_ms, end_ms: end.timestamp_ms };
    if window.end_ms <= window.start_ms {
        return Err(MetricsError::EmptyWindow);
    }
    let secs: T = window.seconds();
    Ok(LifecycleRates {
        creations_per_s: T::of_u64(end.creations - start.creations) / secs,
        teardowns_per_s: T::of_u64(end.teardowns - start.teardowns) / secs,
    })
}

/// System CPU time relative to function CPU time. The worker and master
/// parts are expressed in the same units, so `worker + master == total`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpuOverhead<T> {
    pub total: T,
    pub worker: T,
    pub master: T,
}

impl<T: Scalar> CpuOverhead<T> {
    /// Fraction of the overhead coming from worker nodes.
    pub fn worker_share(&self) -> Option<T> {
        (self.total > T::zero()).then(|| self.worker / self.total)
    }
}

pub fn normalized_cpu_overhead<T: Scalar>(
    start: &UsageSample,
    end: &UsageSample,
) -> Result<CpuOverhead<T>, MetricsError> {
    let work = end.function_work_cpu_ms - start.function_work_cpu_ms;
    if work == 0 {
        return Err(MetricsError::ZeroUsefulWork);
    }
    let work = T::of_u64(work);
    let worker = T::of(end.worker_overhead_cpu_ms - start.worker_overhead_cpu_ms) / work;
    let master = T::of(end.master_overhead_cpu_ms - start.master_overhead_cpu_ms) / work;
    Ok(CpuOverhead { total: worker + master, worker, master })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionTail {
    pub function_id: String,
    pub invocations: usize,
    pub p99_slowdown: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub percentile: f64,
    pub queueing_ms: f64,
}

/// Aggregated outcome of one experiment. Undefined aggregates are `None`
/// and serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub policy: String,
    pub seed: u64,
    pub slowdown_geomean_p99: Option<f64>,
    pub normalized_memory: Option<f64>,
    pub creation_rate_per_s: Option<f64>,
    pub teardown_rate_per_s: Option<f64>,
    pub cpu_overhead_total: Option<f64>,
    pub cpu_overhead_worker: Option<f64>,
    pub cpu_overhead_master: Option<f64>,
    pub cpu_overhead_worker_share: Option<f64>,
    pub excluded_functions: usize,
    pub measured_invocations: usize,
    pub total_invocations: usize,
    pub cold_start_fraction: Option<f64>,
    pub peak_node_utilization: f64,
    pub events_processed: u64,
    pub plan_checksum: String,
    pub window: Window,
    pub per_function_p99: Vec<FunctionTail>,
    pub queueing_cdf: Vec<CdfPoint>,
    pub config: serde_json::Value,
}

/// Inputs for [`build_report`].
pub struct ReportInputs<'a> {
    pub policy: &'a str,
    pub seed: u64,
    pub function_ids: &'a [String],
    pub records: &'a [InvocationRecord],
    pub window: Window,
    pub window_start: &'a UsageSample,
    pub window_end: &'a UsageSample,
    pub peak_node_utilization: f64,
    pub events_processed: u64,
    pub plan_checksum: String,
    pub config: serde_json::Value,
}

pub fn build_report(inputs: ReportInputs<'_>) -> ExperimentReport {
    let measured: Vec<&InvocationRecord> = inputs
        .records
        .iter()
        .filter(|r| r.arrival_ms >= inputs.window.start_ms)
        .collect();

    let mut by_function: Vec<Vec<InvocationRecord>> = vec![Vec::new(); inputs.function_ids.len()];
    for r in &measured {
        by_function[r.function as usize].push(**r);
    }
    let mut tails = Vec::new();
    let mut excluded = 0;
    for (id, recs) in inputs.function_ids.iter().zip(&by_function) {
        match per_function_p99::<f64>(recs) {
            Ok(p99) => tails.push(FunctionTail { function_id: id.clone(), invocations: recs.len(), p99_slowdown: p99 }),
            Err(_) => excluded += 1,
        }
    }
    let p99s: Vec<f64> = tails.iter().map(|t| t.p99_slowdown).collect();

    let mut queueing: Vec<f64> = measured.iter().map(|r| r.queueing_time_ms() as f64).collect();
    let queueing_cdf = cdf_points(sort_scalars(&mut queueing))
        .into_iter()
        .map(|(percentile, queueing_ms)| CdfPoint { percentile, queueing_ms })
        .collect();
    let cold = measured.iter().filter(|r| r.cold).count();

    let memory = normalized_memory_between::<f64>(inputs.window_start, inputs.window_end).ok();
    let rates = creation_rate::<f64>(inputs.window_start, inputs.window_end).ok();
    let cpu = normalized_cpu_overhead::<f64>(inputs.window_start, inputs.window_end).ok();

    ExperimentReport {
        policy: inputs.policy.to_owned(),
        seed: inputs.seed,
        slowdown_geomean_p99: aggregate_slowdown(&p99s).ok(),
        normalized_memory: memory,
        creation_rate_per_s: rates.map(|r| r.creations_per_s),
        teardown_rate_per_s: rates.map(|r| r.teardowns_per_s),
        cpu_overhead_total: cpu.map(|c| c.total),
        cpu_overhead_worker: cpu.map(|c| c.worker),
        cpu_overhead_master: cpu.map(|c| c.master),
        cpu_overhead_worker_share: cpu.and_then(|c| c.worker_share()),
        excluded_functions: excluded,
        measured_invocations: measured.len(),
        total_invocations: inputs.records.len(),
        cold_start_fraction: (!measured.is_empty()).then(|| cold as f64 / measured.len() as f64),
        peak_node_utilization: inputs.peak_node_utilization,
        events_processed: inputs.events_processed,
        plan_checksum: inputs.plan_checksum,
        window: inputs.window,
        per_function_p99: tails,
        queueing_cdf,
        config: inputs.config,
    }
}

/// Columns of the sweep summary CSV.
pub const SUMMARY_HEADER: [&str; 10] = [
    "policy",
    "keepalive_s",
    "window_s",
    "target",
    "cc",
    "slowdown",
    "norm_mem",
    "creation_rate",
    "cpu_overhead",
    "worker_share",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One summary row. Policy parameters are read from the config echo.
pub fn summary_row(report: &ExperimentReport) -> Vec<String> {
    let policy = &report.config["policy"];
    let secs = |key: &str| policy[key].as_u64().map(|ms| (ms as f64 / 1000.0).to_string()).unwrap_or_default();
    let num = |key: &str| policy[key].as_f64().map(|v| v.to_string()).unwrap_or_default();
    vec![
        report.policy.clone(),
        secs("keepalive_ms"),
        secs("window_ms"),
        num("utilization_target"),
        policy["container_concurrency"].as_u64().map(|v| v.to_string()).unwrap_or_default(),
        opt(report.slowdown_geomean_p99),
        opt(report.normalized_memory),
        opt(report.creation_rate_per_s),
        opt(report.cpu_overhead_total),
        opt(report.cpu_overhead_worker_share),
    ]
}

pub fn write_summary_csv<'a>(
    reports: impl IntoIterator<Item = &'a ExperimentReport>,
    path: &Path,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in reports {
        w.write_record(summary_row(r))?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    SummaryCsv,
    CdfCsv,
}

/// Writes one artifact for `report` to `path`.
pub fn export(report: &ExperimentReport, format: ExportFormat, path: &Path) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    match format {
        ExportFormat::Json => {
            let mut f = fs::File::create(path)?;
            serde_json::to_writer_pretty(&mut f, report)?;
            f.write_all(b"\n")
        }
        ExportFormat::SummaryCsv => write_summary_csv([report], path),
        ExportFormat::CdfCsv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["percentile", "queueing_ms"])?;
            for p in &report.queueing_cdf {
                w.write_record([format!("{:.1}", p.percentile), p.queueing_ms.to_string()])?;
            }
            w.flush()
        }
    }
}

/// Writes `{stem}.json`, `{stem}.csv` and `{stem}_cdf.csv` under `dir`.
pub fn export_all(report: &ExperimentReport, dir: &Path, stem: &str) -> std::io::Result<Vec<PathBuf>> {
    let paths = vec![
        dir.join(format!("{stem}.json")),
        dir.join(format!("{stem}.csv")),
        dir.join(format!("{stem}_cdf.csv")),
    ];
    export(report, ExportFormat::Json, &paths[0])?;
    export(report, ExportFormat::SummaryCsv, &paths[1])?;
    export(report, ExportFormat::CdfCsv, &paths[2])?;
    Ok(paths)
}
