//! Worker nodes, instance lifecycle, placement and cost accounting.
//!
//! Memory is reserved from the moment an instance starts booting and held
//! until teardown. Executions never slow down: each in-flight request
//! occupies one core-equivalent for exactly its duration. CPU spent on
//! system management is booked per lifecycle event plus optional background
//! rates; memory and live-instance counts are integrated exactly over
//! virtual time.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{RngStream, TimeMs};

pub type InstanceId = u64;
pub type NodeId = u32;
pub type FunctionIdx = u32;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("no node has {memory_mb} MB free for function {function}")]
    ClusterOutOfMemory { function: FunctionIdx, memory_mb: u32 },
    #[error("instance {0} is busy and cannot be terminated")]
    TerminateBusyInstance(InstanceId),
    #[error("instance {0} is already running at its concurrency limit")]
    ConcurrencyExceeded(InstanceId),
    #[error("instance {0} does not exist")]
    UnknownInstance(InstanceId),
    #[error("instance {id}: illegal transition {from} -> {to}")]
    IllegalTransition { id: InstanceId, from: InstanceState, to: InstanceState },
}

/// Millisecond delay distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DelayDist {
    Deterministic { value: u64 },
    Uniform { lo: u64, hi: u64 },
    /// Log-normal with parameters of the underlying normal, truncated to
    /// `[lo, hi]` by clamping.
    LogNormal { mu: f64, sigma: f64, lo: u64, hi: u64 },
}

impl DelayDist {
    pub fn bounds(&self) -> (u64, u64) {
        match *self {
            DelayDist::Deterministic { value } => (value, value),
            DelayDist::Uniform { lo, hi } | DelayDist::LogNormal { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let (lo, hi) = self.bounds();
        if lo > hi {
            return Err(format!("bounds out of order: lo={lo} > hi={hi}"));
        }
        if let DelayDist::LogNormal { mu, sigma, .. } = *self {
            if !mu.is_finite() || !(sigma >= 0.0) {
                return Err(format!("invalid log-normal parameters mu={mu} sigma={sigma}"));
            }
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            DelayDist::Deterministic { value } => value,
            DelayDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
            DelayDist::LogNormal { mu, sigma, lo, hi } => {
                let d = LogNormal::new(mu, sigma).expect("validated log-normal");
                (d.sample(rng).round() as u64).clamp(lo, hi)
            }
        }
    }

    /// Scales every parameter in milliseconds by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: u64| (v as f64 * factor).round() as u64;
        match *self {
            DelayDist::Deterministic { value } => DelayDist::Deterministic { value: s(value) },
            DelayDist::Uniform { lo, hi } => DelayDist::Uniform { lo: s(lo), hi: s(hi) },
            DelayDist::LogNormal { mu, sigma, lo, hi } => DelayDist::LogNormal {
                mu: mu + factor.ln(),
                sigma,
                lo: s(lo),
                hi: s(hi),
            },
        }
    }
}

/// Latencies and CPU charges of the platform.
///
/// Worker-side charges go to the node hosting the instance; master-side
/// charges model the control plane. `node_background_cpu_ms_per_sec` is a
/// flat per-node agent cost, the worker counterpart of
/// `master_background_cpu_ms_per_sec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub creation_delay_ms: DelayDist,
    pub warm_path_overhead_ms: DelayDist,
    pub cpu_create_worker_ms: f64,
    pub cpu_teardown_worker_ms: f64,
    pub cpu_master_per_lifecycle_ms: f64,
    pub idle_background_cpu_ms_per_sec: f64,
    pub node_background_cpu_ms_per_sec: f64,
    pub master_background_cpu_ms_per_sec: f64,
}

/// Names of the shipped cost profiles.
pub const COST_PROFILES: [&str; 2] = ["knative-like", "aws-like"];

impl CostModel {
    /// ~1 s cold starts, 5-10 ms warm path.
    pub fn knative_like() -> Self {
        Self {
            creation_delay_ms: DelayDist::Uniform { lo: 900, hi: 1100 },
            warm_path_overhead_ms: DelayDist::Uniform { lo: 5, hi: 10 },
            ..Self::default_charges()
        }
    }

    /// ~300 ms cold starts, 20-30 ms warm path.
    pub fn aws_like() -> Self {
        Self {
            creation_delay_ms: DelayDist::Uniform { lo: 280, hi: 320 },
            warm_path_overhead_ms: DelayDist::Uniform { lo: 20, hi: 30 },
            ..Self::default_charges()
        }
    }

    /// CPU charges shared by both profiles. Lifecycle and background costs
    /// are each split 4:1 between workers and master.
    fn default_charges() -> Self {
        Self {
            creation_delay_ms: DelayDist::Deterministic { value: 0 },
            warm_path_overhead_ms: DelayDist::Deterministic { value: 0 },
            cpu_create_worker_ms: 7_680.0,
            cpu_teardown_worker_ms: 1_920.0,
            cpu_master_per_lifecycle_ms: 1_200.0,
            idle_background_cpu_ms_per_sec: 0.0,
            node_background_cpu_ms_per_sec: 160.0,
            master_background_cpu_ms_per_sec: 320.0,
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "knative-like" => Some(Self::knative_like()),
            "aws-like" => Some(Self::aws_like()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.creation_delay_ms.validate().map_err(|e| format!("creation_delay_ms: {e}"))?;
        self.warm_path_overhead_ms.validate().map_err(|e| format!("warm_path_overhead_ms: {e}"))?;
        let rates = [
            ("cpu_create_worker_ms", self.cpu_create_worker_ms),
            ("cpu_teardown_worker_ms", self.cpu_teardown_worker_ms),
            ("cpu_master_per_lifecycle_ms", self.cpu_master_per_lifecycle_ms),
            ("idle_background_cpu_ms_per_sec", self.idle_background_cpu_ms_per_sec),
            ("node_background_cpu_ms_per_sec", self.node_background_cpu_ms_per_sec),
            ("master_background_cpu_ms_per_sec", self.master_background_cpu_ms_per_sec),
        ];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        Ok(())
    }

    /// Multiplies every CPU charge by `factor`; latencies are untouched.
    pub fn with_cpu_charges_scaled(&self, factor: f64) -> Self {
        Self {
            cpu_create_worker_ms: self.cpu_create_worker_ms * factor,
            cpu_teardown_worker_ms: self.cpu_teardown_worker_ms * factor,
            cpu_master_per_lifecycle_ms: self.cpu_master_per_lifecycle_ms * factor,
            idle_background_cpu_ms_per_sec: self.idle_background_cpu_ms_per_sec * factor,
            node_background_cpu_ms_per_sec: self.node_background_cpu_ms_per_sec * factor,
            master_background_cpu_ms_per_sec: self.master_background_cpu_ms_per_sec * factor,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterShape {
    pub nodes: u32,
    pub cores_per_node: u32,
    pub memory_mb_per_node: u64,
}

impl Default for ClusterShape {
    fn default() -> Self {
        Self { nodes: 8, cores_per_node: 10, memory_mb_per_node: 65_536 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstanceState {
    Creating,
    Idle,
    Busy,
    Terminating,
}

impl fmt::Display for InstanceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub function: FunctionIdx,
    pub node: NodeId,
    pub memory_mb: u32,
    pub state: InstanceState,
    pub concurrency_limit: u32,
    pub in_flight: u32,
    pub created_at: TimeMs,
    pub ready_at: Option<TimeMs>,
    pub idle_since: Option<TimeMs>,
}

/// Piecewise-constant quantity with its exact time integral.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepIntegral {
    value: u64,
    last: TimeMs,
    area: u128,
}

impl StepIntegral {
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn set(&mut self, now: TimeMs, value: u64) {
        self.area += u128::from(self.value) * u128::from(now - self.last);
        self.last = now;
        self.value = value;
    }

    pub fn add(&mut self, now: TimeMs, delta: i64) {
        let v = self.value.checked_add_signed(delta).expect("step integral went negative");
        self.set(now, v);
    }

    /// Integral of the value over `[0, now]`, in value-milliseconds.
    pub fn area_at(&self, now: TimeMs) -> u128 {
        self.area + u128::from(self.value) * u128::from(now.saturating_sub(self.last))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: NodeId,
    pub cores: u32,
    pub memory_capacity_mb: u64,
    pub reserved_memory_mb: u64,
    pub running_requests: u32,
    pub peak_running_requests: u32,
    /// CPU-ms of completed function executions.
    pub function_work_cpu_ms: u64,
    /// CPU-ms of lifecycle charges booked on this node.
    pub lifecycle_cpu_ms: f64,
    pub live_instances: StepIntegral,
}

impl NodeState {
    pub fn free_memory_mb(&self) -> u64 {
        self.memory_capacity_mb - self.reserved_memory_mb
    }

    pub fn utilization(&self) -> f64 {
        f64::from(self.running_requests) / f64::from(self.cores)
    }

    pub fn peak_utilization(&self) -> f64 {
        f64::from(self.peak_running_requests) / f64::from(self.cores)
    }
}

/// Per-node view returned by [`Cluster::snapshot_usage`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeUsage {
    pub node: NodeId,
    pub cpu_utilization: f64,
    pub reserved_memory_mb: u64,
    pub memory_capacity_mb: u64,
    pub live_instances: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub total_instance_memory_mb: u64,
    pub busy_instance_memory_mb: u64,
    pub live_instances: u64,
    pub per_node: Vec<NodeUsage>,
}

/// Cumulative counters and integrals at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageSample {
    pub timestamp_ms: TimeMs,
    pub total_instance_memory_mb: u64,
    pub busy_instance_memory_mb: u64,
    pub live_instances: u64,
    pub creations: u64,
    pub teardowns: u64,
    /// Integral of total instance memory, MB-ms.
    pub total_memory_mb_ms: u128,
    /// Integral of busy instance memory, MB-ms.
    pub busy_memory_mb_ms: u128,
    pub function_work_cpu_ms: u64,
    pub worker_overhead_cpu_ms: f64,
    pub master_overhead_cpu_ms: f64,
}

#[derive(Debug, Clone)]
pub struct Cluster {
    shape: ClusterShape,
    cost: CostModel,
    nodes: Vec<NodeState>,
    instances: HashMap<InstanceId, Instance>,
    next_instance: InstanceId,
    creation_delays: RngStream,
    creations: u64,
    teardowns: u64,
    total_memory: StepIntegral,
    busy_memory: StepIntegral,
    live: StepIntegral,
}

impl Cluster {
    pub fn new(shape: ClusterShape, cost: CostModel, seed: u64) -> Self {
        let nodes = (0..shape.nodes)
            .map(|id| NodeState {
                id,
                cores: shape.cores_per_node,
                memory_capacity_mb: shape.memory_mb_per_node,
                reserved_memory_mb: 0,
                running_requests: 0,
                peak_running_requests: 0,
                function_work_cpu_ms: 0,
                lifecycle_cpu_ms: 0.0,
                live_instances: StepIntegral::default(),
            })
            .collect();
        Self {
            shape,
            cost,
            nodes,
            instances: HashMap::new(),
            next_instance: 0,
            creation_delays: RngStream::new(seed, "creation-delay"),
            creations: 0,
            teardowns: 0,
            total_memory: StepIntegral::default(),
            busy_memory: StepIntegral::default(),
            live: StepIntegral::default(),
        }
    }

    pub fn shape(&self) -> &ClusterShape {
        &self.shape
    }

    pub fn cost(&self) -> &CostModel {
        &self.cost
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn instance(&self, id: InstanceId) -> Option<&Instance> {
        self.instances.get(&id)
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn creations(&self) -> u64 {
        self.creations
    }

    pub fn teardowns(&self) -> u64 {
        self.teardowns
    }

    fn get_mut(&mut self, id: InstanceId) -> Result<&mut Instance, ClusterError> {
        self.instances.get_mut(&id).ok_or(ClusterError::UnknownInstance(id))
    }

    /// Node with the most free memory that fits `memory_mb`; ties go to the
    /// lowest node id.
    pub fn place(&self, memory_mb: u32) -> Option<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.free_memory_mb() >= u64::from(memory_mb))
            .max_by(|a, b| a.free_memory_mb().cmp(&b.free_memory_mb()).then(b.id.cmp(&a.id)))
            .map(|n| n.id)
    }

    /// Starts booting a new instance. Memory is reserved immediately and the
    /// instance becomes ready at the returned time.
    pub fn start_instance(
        &mut self,
        function: FunctionIdx,
        memory_mb: u32,
        concurrency_limit: u32,
        now: TimeMs,
    ) -> Result<(InstanceId, TimeMs), ClusterError> {
        let node = self
            .place(memory_mb)
            .ok_or(ClusterError::ClusterOutOfMemory { function, memory_mb })?;
        let delay = self.cost.creation_delay_ms.draw(self.creation_delays.rng());
        let id = self.next_instance;
        self.next_instance += 1;

        let n = &mut self.nodes[node as usize];
        n.reserved_memory_mb += u64::from(memory_mb);
        n.lifecycle_cpu_ms += self.cost.cpu_create_worker_ms;
        n.live_instances.add(now, 1);
        self.total_memory.add(now, i64::from(memory_mb));
        self.live.add(now, 1);
        self.creations += 1;

        self.instances.insert(
            id,
            Instance {
                id,
                function,
                node,
                memory_mb,
                state: InstanceState::Creating,
                concurrency_limit: concurrency_limit.max(1),
                in_flight: 0,
                created_at: now,
                ready_at: None,
                idle_since: None,
            },
        );
        Ok((id, now + delay))
    }

    /// Creating -> Idle.
    pub fn mark_ready(&mut self, id: InstanceId, now: TimeMs) -> Result<(), ClusterError> {
        let inst = self.get_mut(id)?;
        if inst.state != InstanceState::Creating {
            return Err(ClusterError::IllegalTransition { id, from: inst.state, to: InstanceState::Idle });
        }
        inst.state = InstanceState::Idle;
        inst.ready_at = Some(now);
        inst.idle_since = Some(now);
        Ok(())
    }

    /// Tears down an idle (or still booting) instance and releases its memory.
    pub fn terminate_instance(&mut self, id: InstanceId, now: TimeMs) -> Result<Instance, ClusterError> {
        let inst = self.instances.get(&id).ok_or(ClusterError::UnknownInstance(id))?;
        match inst.state {
            InstanceState::Idle | InstanceState::Creating => {}
            InstanceState::Busy => return Err(ClusterError::TerminateBusyInstance(id)),
            InstanceState::Terminating => {
                return Err(ClusterError::IllegalTransition {
                    id,
                    from: inst.state,
                    to: InstanceState::Terminating,
                })
            }
        }
        let mut inst = self.instances.remove(&id).expect("checked above");
        inst.state = InstanceState::Terminating;
        let n = &mut self.nodes[inst.node as usize];
        n.reserved_memory_mb -= u64::from(inst.memory_mb);
        n.lifecycle_cpu_ms += self.cost.cpu_teardown_worker_ms;
        n.live_instances.add(now, -1);
        self.total_memory.add(now, -i64::from(inst.memory_mb));
        self.live.add(now, -1);
        self.teardowns += 1;
        Ok(inst)
    }

    /// Occupies one concurrency slot. The caller schedules completion.
    pub fn begin_execution(&mut self, id: InstanceId, now: TimeMs) -> Result<(), ClusterError> {
        let inst = self.instances.get_mut(&id).ok_or(ClusterError::UnknownInstance(id))?;
        match inst.state {
            InstanceState::Idle | InstanceState::Busy => {}
            from => return Err(ClusterError::IllegalTransition { id, from, to: InstanceState::Busy }),
        }
        if inst.in_flight >= inst.concurrency_limit {
            return Err(ClusterError::ConcurrencyExceeded(id));
        }
        let became_busy = inst.in_flight == 0;
        inst.in_flight += 1;
        inst.state = InstanceState::Busy;
        inst.idle_since = None;
        let (node, mem) = (inst.node, inst.memory_mb);
        if became_busy {
            self.busy_memory.add(now, i64::from(mem));
        }
        let n = &mut self.nodes[node as usize];
        n.running_requests += 1;
        n.peak_running_requests = n.peak_running_requests.max(n.running_requests);
        Ok(())
    }

    /// Releases one slot and books `work_ms` of function CPU time. Returns
    /// true if the instance is now idle.
    pub fn finish_execution(&mut self, id: InstanceId, now: TimeMs, work_ms: u64) -> Result<bool, ClusterError> {
        let inst = self.instances.get_mut(&id).ok_or(ClusterError::UnknownInstance(id))?;
        if inst.in_flight == 0 || inst.state != InstanceState::Busy {
            return Err(ClusterError::IllegalTransition { id, from: inst.state, to: InstanceState::Idle });
        }
        inst.in_flight -= 1;
        let idle = inst.in_flight == 0;
        if idle {
            inst.state = InstanceState::Idle;
            inst.idle_since = Some(now);
        }
        let (node, mem) = (inst.node, inst.memory_mb);
        if idle {
            self.busy_memory.add(now, -i64::from(mem));
        }
        let n = &mut self.nodes[node as usize];
        n.running_requests -= 1;
        n.function_work_cpu_ms += work_ms;
        Ok(idle)
    }

    pub fn snapshot_usage(&self, _now: TimeMs) -> UsageSnapshot {
        UsageSnapshot {
            total_instance_memory_mb: self.total_memory.value(),
            busy_instance_memory_mb: self.busy_memory.value(),
            live_instances: self.live.value(),
            per_node: self
                .nodes
                .iter()
                .map(|n| NodeUsage {
                    node: n.id,
                    cpu_utilization: n.utilization(),
                    reserved_memory_mb: n.reserved_memory_mb,
                    memory_capacity_mb: n.memory_capacity_mb,
                    live_instances: n.live_instances.value(),
                })
                .collect(),
        }
    }

    /// Worker overhead booked on one node up to `now`.
    pub fn node_worker_overhead_cpu_ms(&self, node: NodeId, now: TimeMs) -> f64 {
        let n = &self.nodes[node as usize];
        let live_sec = n.live_instances.area_at(now) as f64 / 1000.0;
        n.lifecycle_cpu_ms
            + live_sec * self.cost.idle_background_cpu_ms_per_sec
            + now as f64 / 1000.0 * self.cost.node_background_cpu_ms_per_sec
    }

    pub fn worker_overhead_cpu_ms(&self, now: TimeMs) -> f64 {
        let live_sec = self.live.area_at(now) as f64 / 1000.0;
        self.creations as f64 * self.cost.cpu_create_worker_ms
            + self.teardowns as f64 * self.cost.cpu_teardown_worker_ms
            + live_sec * self.cost.idle_background_cpu_ms_per_sec
            + f64::from(self.shape.nodes) * now as f64 / 1000.0 * self.cost.node_background_cpu_ms_per_sec
    }

    pub fn master_overhead_cpu_ms(&self, now: TimeMs) -> f64 {
        (self.creations + self.teardowns) as f64 * self.cost.cpu_master_per_lifecycle_ms
            + now as f64 / 1000.0 * self.cost.master_background_cpu_ms_per_sec
    }

    pub fn function_work_cpu_ms(&self) -> u64 {
        self.nodes.iter().map(|n| n.function_work_cpu_ms).sum()
    }

    pub fn usage_sample(&self, now: TimeMs) -> UsageSample {
        UsageSample {
            timestamp_ms: now,
            total_instance_memory_mb: self.total_memory.value(),
            busy_instance_memory_mb: self.busy_memory.value(),
            live_instances: self.live.value(),
            creations: self.creations,
            teardowns: self.teardowns,
            total_memory_mb_ms: self.total_memory.area_at(now),
            busy_memory_mb_ms: self.busy_memory.area_at(now),
            function_work_cpu_ms: self.function_work_cpu_ms(),
            worker_overhead_cpu_ms: self.worker_overhead_cpu_ms(now),
            master_overhead_cpu_ms: self.master_overhead_cpu_ms(now),
        }
    }

    pub fn peak_node_utilization(&self) -> f64 {
        self.nodes.iter().map(NodeState::peak_utilization).fold(0.0, f64::max)
    }

    /// O(nodes) check of the per-node memory bounds.
    pub fn check_nodes(&self) -> Result<(), String> {
        for n in &self.nodes {
            if n.reserved_memory_mb > n.memory_capacity_mb {
                return Err(format!(
                    "node {} reserved {} MB of {} MB",
                    n.id, n.reserved_memory_mb, n.memory_capacity_mb
                ));
            }
        }
        Ok(())
    }

    /// Full consistency check over every instance.
    pub fn check_all(&self) -> Result<(), String> {
        self.check_nodes()?;
        let mut reserved = vec![0u64; self.nodes.len()];
        let mut running = vec![0u32; self.nodes.len()];
        let (mut total, mut busy) = (0u64, 0u64);
        for inst in self.instances.values() {
            if inst.in_flight > inst.concurrency_limit {
                return Err(format!("instance {} exceeds its concurrency limit", inst.id));
            }
            let consistent = match inst.state {
                InstanceState::Busy => inst.in_flight >= 1,
                InstanceState::Idle | InstanceState::Creating => inst.in_flight == 0,
                InstanceState::Terminating => false,
            };
            if !consistent {
                return Err(format!("instance {} in {} with {} in flight", inst.id, inst.state, inst.in_flight));
            }
            reserved[inst.node as usize] += u64::from(inst.memory_mb);
            running[inst.node as usize] += inst.in_flight;
            total += u64::from(inst.memory_mb);
            if inst.state == InstanceState::Busy {
                busy += u64::from(inst.memory_mb);
            }
        }
        for (n, (r, q)) in self.nodes.iter().zip(reserved.iter().zip(&running)) {
            if n.reserved_memory_mb != *r || n.running_requests != *q {
                return Err(format!("node {} bookkeeping drifted", n.id));
            }
        }
        if total != self.total_memory.value() || busy != self.busy_memory.value() {
            return Err("memory totals drifted".into());
        }
        if self.live.value() != self.instances.len() as u64 {
            return Err("live instance count drifted".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_cost(delay: u64) -> CostModel {
        CostModel {
            creation_delay_ms: DelayDist::Deterministic { value: delay },
            warm_path_overhead_ms: DelayDist::Deterministic { value: 0 },
            cpu_create_worker_ms: 8.0,
            cpu_teardown_worker_ms: 4.0,
            cpu_master_per_lifecycle_ms: 3.0,
            idle_background_cpu_ms_per_sec: 0.0,
            node_background_cpu_ms_per_sec: 0.0,
            master_background_cpu_ms_per_sec: 0.0,
        }
    }

    fn shape(nodes: u32, mem: u64) -> ClusterShape {
        ClusterShape { nodes, cores_per_node: 4, memory_mb_per_node: mem }
    }

    #[test]
    fn ready_time_is_now_plus_delay() {
        let mut c = Cluster::new(shape(1, 1024), fixed_cost(1000), 0);
        let (id, ready) = c.start_instance(0, 128, 1, 5000).unwrap();
        assert_eq!(ready, 6000);
        assert_eq!(c.instance(id).unwrap().state, InstanceState::Creating);
        assert_eq!(c.creations(), 1);
    }

    #[test]
    fn placement_prefers_most_free_memory() {
        let mut c = Cluster::new(shape(2, 512), fixed_cost(0), 0);
        // Leave node 0 with 128 MB free, node 1 with 512 MB.
        c.start_instance(9, 384, 1, 0).unwrap();
        assert_eq!(c.nodes()[0].free_memory_mb(), 128);
        let (id, _) = c.start_instance(1, 256, 1, 0).unwrap();
        assert_eq!(c.instance(id).unwrap().node, 1);
        // Ties go to the lowest id.
        let mut c = Cluster::new(shape(3, 512), fixed_cost(0), 0);
        let (id, _) = c.start_instance(0, 1, 1, 0).unwrap();
        assert_eq!(c.instance(id).unwrap().node, 0);
    }

    #[test]
    fn out_of_memory_reported() {
        let mut c = Cluster::new(shape(1, 256), fixed_cost(0), 0);
        c.start_instance(0, 200, 1, 0).unwrap();
        assert_eq!(
            c.start_instance(1, 100, 1, 0),
            Err(ClusterError::ClusterOutOfMemory { function: 1, memory_mb: 100 })
        );
    }

    #[test]
    fn uniform_delays_reproducible_and_bounded() {
        let mut cost = fixed_cost(0);
        cost.creation_delay_ms = DelayDist::Uniform { lo: 280, hi: 320 };
        let run = || {
            let mut c = Cluster::new(shape(1, 1 << 20), cost.clone(), 42);
            (0..10).map(|_| c.start_instance(0, 1, 1, 0).unwrap().1).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|d| (280..=320).contains(d)));
    }

    #[test]
    fn terminate_releases_memory() {
        let mut c = Cluster::new(shape(1, 1024), fixed_cost(0), 0);
        let (a, _) = c.start_instance(0, 256, 1, 0).unwrap();
        c.start_instance(0, 256, 1, 0).unwrap();
        assert_eq!(c.nodes()[0].reserved_memory_mb, 512);
        c.mark_ready(a, 0).unwrap();
        c.terminate_instance(a, 10).unwrap();
        assert_eq!(c.nodes()[0].reserved_memory_mb, 256);
        assert_eq!(c.teardowns(), 1);
        c.check_all().unwrap();
    }

    #[test]
    fn terminate_busy_forbidden() {
        let mut c = Cluster::new(shape(1, 1024), fixed_cost(0), 0);
        let (a, _) = c.start_instance(0, 256, 1, 0).unwrap();
        c.mark_ready(a, 0).unwrap();
        c.begin_execution(a, 0).unwrap();
        assert_eq!(c.terminate_instance(a, 1), Err(ClusterError::TerminateBusyInstance(a)));
    }

    #[test]
    fn master_cpu_is_two_charges_per_instance() {
        let mut c = Cluster::new(shape(1, 1 << 20), fixed_cost(0), 0);
        let n = 17u64;
        for i in 0..n {
            let (id, _) = c.start_instance(0, 1, 1, i).unwrap();
            c.terminate_instance(id, i).unwrap();
        }
        assert_eq!(c.master_overhead_cpu_ms(100), 2.0 * n as f64 * 3.0);
        assert_eq!(c.worker_overhead_cpu_ms(100), n as f64 * (8.0 + 4.0));
    }

    #[test]
    fn concurrency_cap_enforced() {
        let mut c = Cluster::new(shape(1, 1024), fixed_cost(0), 0);
        let (a, _) = c.start_instance(0, 128, 1, 0).unwrap();
        c.mark_ready(a, 0).unwrap();
        c.begin_execution(a, 0).unwrap();
        assert_eq!(c.begin_execution(a, 0), Err(ClusterError::ConcurrencyExceeded(a)));
    }

    #[test]
    fn work_is_sum_of_durations() {
        let mut c = Cluster::new(shape(1, 1024), fixed_cost(0), 0);
        let (a, _) = c.start_instance(0, 128, 4, 0).unwrap();
        c.mark_ready(a, 0).unwrap();
        for _ in 0..3 {
            c.begin_execution(a, 0).unwrap();
        }
        assert!(!c.finish_execution(a, 100, 100).unwrap());
        assert!(!c.finish_execution(a, 100, 100).unwrap());
        assert_eq!(c.instance(a).unwrap().state, InstanceState::Busy);
        assert!(c.finish_execution(a, 100, 100).unwrap());
        assert_eq!(c.function_work_cpu_ms(), 300);
        let inst = c.instance(a).unwrap();
        assert_eq!((inst.state, inst.idle_since), (InstanceState::Idle, Some(100)));
    }

    #[test]
    fn snapshot_counts_live_and_busy() {
        let mut c = Cluster::new(shape(1, 4096), fixed_cost(0), 0);
        assert_eq!(c.snapshot_usage(0).total_instance_memory_mb, 0);
        let (a, _) = c.start_instance(0, 128, 1, 0).unwrap();
        let (b, _) = c.start_instance(0, 128, 1, 0).unwrap();
        c.mark_ready(a, 0).unwrap();
        c.mark_ready(b, 0).unwrap();
        c.begin_execution(a, 0).unwrap();
        let s = c.snapshot_usage(0);
        assert_eq!((s.total_instance_memory_mb, s.busy_instance_memory_mb), (256, 128));

        let mut c = Cluster::new(shape(1, 4096), fixed_cost(0), 0);
        for _ in 0..3 {
            c.start_instance(0, 128, 1, 0).unwrap();
        }
        let (d, _) = c.start_instance(0, 128, 1, 0).unwrap();
        c.mark_ready(d, 0).unwrap();
        c.begin_execution(d, 0).unwrap();
        let s = c.snapshot_usage(0);
        assert_eq!((s.total_instance_memory_mb, s.busy_instance_memory_mb), (512, 128));
        assert_eq!(s.live_instances, 4);
    }

    #[test]
    fn memory_integrals_are_exact() {
        let mut c = Cluster::new(shape(1, 4096), fixed_cost(0), 0);
        let (a, _) = c.start_instance(0, 128, 1, 0).unwrap();
        c.mark_ready(a, 0).unwrap();
        c.begin_execution(a, 0).unwrap();
        c.finish_execution(a, 10_000, 10_000).unwrap();
        let s = c.usage_sample(40_000);
        assert_eq!(s.total_memory_mb_ms, 40_000 * 128);
        assert_eq!(s.busy_memory_mb_ms, 10_000 * 128);
    }

    #[test]
    fn default_profiles_split_overhead_four_to_one() {
        for name in COST_PROFILES {
            let cost = CostModel::profile(name).unwrap();
            cost.validate().unwrap();
            let per_pair_worker = cost.cpu_create_worker_ms + cost.cpu_teardown_worker_ms;
            let per_pair_master = 2.0 * cost.cpu_master_per_lifecycle_ms;
            assert!((per_pair_worker / (per_pair_worker + per_pair_master) - 0.8).abs() < 1e-12);
        }
    }
}
