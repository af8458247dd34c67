//! Experiment and sweep configuration.
//!
//! Configs are TOML files. Overrides (`--set key=value` and sweep axes) are
//! applied to the raw key tree before it is deserialized, so every override
//! goes through the same validation as the file itself.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterShape, CostModel, COST_PROFILES};
use crate::engine::TimeMs;
use crate::policy::PolicyConfig;
use crate::trace::{SyntheticSpec, TracePaths};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value at `{key}`: {reason}")]
    InvariantViolation { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvariantViolation { key: key.to_owned(), reason: reason.into() }
}

/// Cost profile by name, with optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub profile: String,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub overrides: toml::Table,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { profile: "knative-like".into(), overrides: toml::Table::new() }
    }
}

impl CostConfig {
    pub fn resolve(&self) -> Result<CostModel, ConfigError> {
        let base = CostModel::profile(&self.profile).ok_or_else(|| {
            invalid("cost.profile", format!("unknown profile `{}` (known: {})", self.profile, COST_PROFILES.join(", ")))
        })?;
        let mut tree = toml::Table::try_from(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (k, v) in &self.overrides {
            if !tree.contains_key(k) {
                return Err(ConfigError::UnknownKey(format!("cost.overrides.{k}")));
            }
            tree.insert(k.clone(), v.clone());
        }
        let model: CostModel = tree.try_into().map_err(|e: toml::de::Error| invalid("cost.overrides", e.message()))?;
        model.validate().map_err(|r| invalid("cost", r))?;
        Ok(model)
    }
}

fn default_experiment_minutes() -> usize {
    80
}

fn default_warmup_minutes() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Directory holding `invocations.csv`, `durations.csv`, `memory.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TracePaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_k: Option<usize>,
    #[serde(default = "default_experiment_minutes")]
    pub experiment_minutes: usize,
    #[serde(default = "default_warmup_minutes")]
    pub warmup_minutes: usize,
}

/// Where a workload's function profiles come from.
pub enum WorkloadSource<'a> {
    Trace(TracePaths),
    Synthetic(&'a SyntheticSpec),
}

impl WorkloadConfig {
    pub fn source(&self, base_dir: &Path) -> Result<WorkloadSource<'_>, ConfigError> {
        match (&self.trace_dir, &self.trace, &self.synthetic) {
            (Some(dir), None, None) => Ok(WorkloadSource::Trace(TracePaths::in_dir(base_dir.join(dir)))),
            (None, Some(paths), None) => Ok(WorkloadSource::Trace(paths.resolve_against(base_dir))),
            (None, None, Some(spec)) => Ok(WorkloadSource::Synthetic(spec)),
            _ => Err(invalid("workload", "set exactly one of trace_dir, trace or synthetic")),
        }
    }
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub cluster: ClusterShape,
    #[serde(default)]
    pub cost: CostConfig,
    pub policy: PolicyConfig,
    pub workload: WorkloadConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.cluster;
        if c.nodes == 0 || c.cores_per_node == 0 || c.memory_mb_per_node == 0 {
            return Err(invalid("cluster", "all capacities must be positive"));
        }
        self.policy.validate().map_err(|r| invalid("policy", r))?;
        self.cost.resolve()?;
        let w = &self.workload;
        if w.experiment_minutes == 0 {
            return Err(invalid("workload.experiment_minutes", "must be positive"));
        }
        if w.warmup_minutes >= w.experiment_minutes {
            return Err(invalid(
                "workload.warmup_minutes",
                format!("{} must be below experiment_minutes ({})", w.warmup_minutes, w.experiment_minutes),
            ));
        }
        if w.sample_k == Some(0) {
            return Err(invalid("workload.sample_k", "must be positive"));
        }
        w.source(Path::new("."))?;
        Ok(())
    }

    pub fn end_ms(&self) -> TimeMs {
        self.workload.experiment_minutes as TimeMs * 60_000
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// One sweep dimension: a dotted key path and the values it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Maximum concurrent experiments; defaults to the number of cores.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub axes: Vec<SweepAxis>,
    /// Give every point the master seed instead of a derived one, so points
    /// differ only in their policy parameters.
    #[serde(default)]
    pub common_random_numbers: bool,
}

/// A base config plus the axes to sweep, kept as a raw key tree so each
/// point can be rebuilt with its overrides applied.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: toml::Table,
    pub base_config: ExperimentConfig,
    pub axes: Vec<SweepAxis>,
    pub parallelism: Option<usize>,
    pub common_random_numbers: bool,
    pub base_dir: PathBuf,
}

/// One point of the cross product.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub assignments: Vec<(String, toml::Value)>,
    pub config: ExperimentConfig,
}

impl SweepPoint {
    /// Stable label built from the axis assignments, e.g.
    /// `keepalive_ms-30000_utilization_target-0.7`.
    pub fn label(&self) -> String {
        self.assignments
            .iter()
            .map(|(k, v)| format!("{}-{}", k.rsplit('.').next().unwrap_or(k), value_label(v)))
            .collect::<Vec<_>>()
            .join("_")
    }
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl SweepSpec {
    pub fn size(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Cross product in row-major order (last axis varies fastest).
    pub fn points(&self) -> Result<Vec<SweepPoint>, ConfigError> {
        let mut points = Vec::with_capacity(self.size());
        for index in 0..self.size() {
            let mut rem = index;
            let mut assignments = vec![(String::new(), toml::Value::Boolean(false)); self.axes.len()];
            for (slot, axis) in self.axes.iter().enumerate().rev() {
                let n = axis.values.len();
                assignments[slot] = (axis.param.clone(), axis.values[rem % n].clone());
                rem /= n;
            }
            let mut tree = self.base.clone();
            for (k, v) in &assignments {
                set_path(&mut tree, k, v.clone())?;
            }
            let config = config_from_table(tree)?;
            points.push(SweepPoint { index, assignments, config });
        }
        Ok(points)
    }
}

/// Parses `key=value`. The value is read as a TOML literal, falling back to
/// a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), ConfigError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override `{s}` is not key=value")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(ConfigError::Parse(format!("override `{s}` has an empty key")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_owned()));
    Ok((k.to_owned(), value))
}

/// Sets a dotted path, creating intermediate tables.
pub fn set_path(tree: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|p| !p.is_empty()).ok_or_else(|| ConfigError::UnknownKey(path.into()))?;
    let mut node = tree;
    for p in parts {
        let entry = node.entry(p.to_owned()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| invalid(path, format!("`{p}` is not a table")))?;
    }
    node.insert(last.to_owned(), value);
    Ok(())
}

fn map_de_error(e: toml::de::Error) -> ConfigError {
    let msg = e.message().to_owned();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(field) = rest.split('`').next() {
            return ConfigError::UnknownKey(field.to_owned());
        }
    }
    ConfigError::Parse(msg)
}

pub fn config_from_table(tree: toml::Table) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = tree.try_into().map_err(map_de_error)?;
    config.validate()?;
    Ok(config)
}

fn read_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(format!("{}: {}", path.display(), e)))
}

/// Loaded file split into the experiment part and an optional sweep part.
pub struct LoadedConfig {
    pub experiment: toml::Table,
    pub sweep: Option<SweepSection>,
    pub base_dir: PathBuf,
}

pub fn load_tree(path: &Path, overrides: &[(String, toml::Value)]) -> Result<LoadedConfig, ConfigError> {
    let mut tree = read_table(path)?;
    for (k, v) in overrides {
        set_path(&mut tree, k, v.clone())?;
    }
    let sweep = match tree.remove("sweep") {
        Some(v) => Some(v.try_into::<SweepSection>().map_err(map_de_error)?),
        None => None,
    };
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { experiment: tree, sweep, base_dir })
}

/// Loads and validates a single-experiment config.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    load_config_with(path, &[])
}

pub fn load_config_with(path: &Path, overrides: &[(String, toml::Value)]) -> Result<ExperimentConfig, ConfigError> {
    config_from_table(load_tree(path, overrides)?.experiment)
}

/// Loads a sweep; a file without a `[sweep]` section is a one-point sweep.
pub fn load_sweep(path: &Path, overrides: &[(String, toml::Value)]) -> Result<SweepSpec, ConfigError> {
    let loaded = load_tree(path, overrides)?;
    let section = loaded.sweep.unwrap_or_default();
    let base_config = config_from_table(loaded.experiment.clone())?;
    let probe = toml::Table::try_from(&base_config).map_err(|e| ConfigError::Parse(e.to_string()))?;
    for axis in &section.axes {
        if axis.values.is_empty() {
            return Err(invalid(&axis.param, "axis has no values"));
        }
        if !path_exists(&probe, &axis.param) && !path_exists(&loaded.experiment, &axis.param) {
            return Err(ConfigError::UnknownKey(axis.param.clone()));
        }
    }
    if section.parallelism == Some(0) {
        return Err(invalid("sweep.parallelism", "must be positive"));
    }
    Ok(SweepSpec {
        base: loaded.experiment,
        base_config,
        axes: section.axes,
        parallelism: section.parallelism,
        common_random_numbers: section.common_random_numbers,
        base_dir: loaded.base_dir,
    })
}

fn path_exists(tree: &toml::Table, path: &str) -> bool {
    let mut node = tree;
    let mut parts = path.split('.').peekable();
    while let Some(p) = parts.next() {
        match node.get(p) {
            Some(_) if parts.peek().is_none() => return true,
            Some(toml::Value::Table(t)) => node = t,
            _ => return false,
        }
    }
    false
}
