//! Front-door routing state: per-function idle pools, FIFO queues and
//! one-shot bindings of requests to booting instances.

use std::collections::{BTreeSet, HashMap, VecDeque};

use crate::cluster::{Cluster, FunctionIdx, InstanceId, InstanceState};
use crate::engine::TimeMs;

/// Index of an invocation in the plan.
pub type RequestIdx = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingRequest {
    pub request: RequestIdx,
    pub function: FunctionIdx,
    pub enqueued_at: TimeMs,
    /// Set only for requests waiting on an instance they triggered.
    pub binding: Option<InstanceId>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RouterError {
    #[error("instance {0} became ready with no bound request")]
    BindingViolation(InstanceId),
}

#[derive(Debug, Default, Clone)]
struct FunctionRouting {
    /// Live instances (creating, idle or busy), in creation order.
    instances: Vec<InstanceId>,
    /// Idle instances keyed by `(idle_since, id)`.
    idle: BTreeSet<(TimeMs, InstanceId)>,
    fifo: VecDeque<PendingRequest>,
}

#[derive(Debug, Default, Clone)]
pub struct Router {
    functions: Vec<FunctionRouting>,
    bindings: HashMap<InstanceId, PendingRequest>,
    idle_key: HashMap<InstanceId, TimeMs>,
    /// Requests that could not get an instance because memory ran out, in
    /// arrival order across functions.
    awaiting_memory: VecDeque<PendingRequest>,
}

impl Router {
    pub fn new(functions: usize) -> Self {
        Self { functions: vec![FunctionRouting::default(); functions], ..Default::default() }
    }

    fn f(&self, function: FunctionIdx) -> &FunctionRouting {
        &self.functions[function as usize]
    }

    fn f_mut(&mut self, function: FunctionIdx) -> &mut FunctionRouting {
        &mut self.functions[function as usize]
    }

    pub fn function_count(&self) -> usize {
        self.functions.len()
    }

    pub fn add_instance(&mut self, function: FunctionIdx, id: InstanceId) {
        self.f_mut(function).instances.push(id);
    }

    pub fn remove_instance(&mut self, function: FunctionIdx, id: InstanceId) {
        self.unmark_idle(function, id);
        let list = &mut self.f_mut(function).instances;
        if let Some(pos) = list.iter().position(|&i| i == id) {
            list.remove(pos);
        }
    }

    pub fn live_count(&self, function: FunctionIdx) -> u32 {
        self.f(function).instances.len() as u32
    }

    pub fn instances(&self, function: FunctionIdx) -> &[InstanceId] {
        &self.f(function).instances
    }

    pub fn mark_idle(&mut self, function: FunctionIdx, id: InstanceId, since: TimeMs) {
        self.unmark_idle(function, id);
        self.f_mut(function).idle.insert((since, id));
        self.idle_key.insert(id, since);
    }

    pub fn unmark_idle(&mut self, function: FunctionIdx, id: InstanceId) {
        if let Some(since) = self.idle_key.remove(&id) {
            self.f_mut(function).idle.remove(&(since, id));
        }
    }

    pub fn idle_count(&self, function: FunctionIdx) -> usize {
        self.f(function).idle.len()
    }

    /// Most recently idled instance; among equal timestamps the newest id.
    pub fn most_recent_idle(&self, function: FunctionIdx) -> Option<InstanceId> {
        self.f(function).idle.last().map(|&(_, id)| id)
    }

    /// Idle instances from the longest-idle one onwards.
    pub fn oldest_idle(&self, function: FunctionIdx) -> impl Iterator<Item = InstanceId> + '_ {
        self.f(function).idle.iter().map(|&(_, id)| id)
    }

    /// Target for a request that may share an instance: a busy instance with
    /// a free slot (oldest first), otherwise the most recently idled one.
    pub fn shared_slot(&self, function: FunctionIdx, cluster: &Cluster) -> Option<InstanceId> {
        let busy_with_room = self.f(function).instances.iter().copied().find(|&id| {
            cluster
                .instance(id)
                .is_some_and(|i| i.state == InstanceState::Busy && i.in_flight < i.concurrency_limit)
        });
        busy_with_room.or_else(|| self.most_recent_idle(function))
    }

    pub fn enqueue(&mut self, req: PendingRequest) {
        debug_assert!(req.binding.is_none());
        self.f_mut(req.function).fifo.push_back(req);
    }

    pub fn dequeue(&mut self, function: FunctionIdx) -> Option<PendingRequest> {
        self.f_mut(function).fifo.pop_front()
    }

    pub fn queue_len(&self, function: FunctionIdx) -> usize {
        self.f(function).fifo.len()
    }

    pub fn bind(&mut self, mut req: PendingRequest, instance: InstanceId) {
        req.binding = Some(instance);
        self.bindings.insert(instance, req);
    }

    pub fn take_binding(&mut self, instance: InstanceId) -> Option<PendingRequest> {
        self.bindings.remove(&instance)
    }

    pub fn binding_count(&self) -> usize {
        self.bindings.len()
    }

    pub fn wait_for_memory(&mut self, req: PendingRequest) {
        self.awaiting_memory.push_back(req);
    }

    pub fn awaiting_memory(&self) -> usize {
        self.awaiting_memory.len()
    }

    pub fn pop_awaiting_memory(&mut self) -> Option<PendingRequest> {
        self.awaiting_memory.pop_front()
    }

    pub fn push_front_awaiting_memory(&mut self, req: PendingRequest) {
        self.awaiting_memory.push_front(req);
    }

    /// Removes and returns the first memory-waiting request of `function`.
    pub fn take_awaiting_memory_for(&mut self, function: FunctionIdx) -> Option<PendingRequest> {
        let pos = self.awaiting_memory.iter().position(|r| r.function == function)?;
        self.awaiting_memory.remove(pos)
    }
}
