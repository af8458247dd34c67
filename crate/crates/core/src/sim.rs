//! Event handler tying the cluster, router and autoscaling policy together
//! and replaying an invocation plan.

use std::collections::HashMap;

use crate::cluster::{Cluster, ClusterError, ClusterShape, CostModel, FunctionIdx, InstanceId, UsageSample};
use crate::engine::{Engine, EngineError, EventHandle, EventKind, EventPayload, EventQueue, Handler, LogEntry, RngStream, SimEvent, TimeMs};
use crate::metrics::InvocationRecord;
use crate::policy::{desired_instances, scaling_action, ConcurrencyMeter, ConcurrencyWindow, PolicyConfig, ScalingAction};
use crate::router::{PendingRequest, RequestIdx, Router, RouterError};
use crate::trace::InvocationPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Arrival(RequestIdx),
    InstanceReady(InstanceId),
    Complete { instance: InstanceId, request: RequestIdx },
    IdleExpiry(InstanceId),
    ScaleEvaluation,
    MetricsSample,
    ConcurrencySample,
}

impl EventPayload for Event {
    fn kind(&self) -> EventKind {
        match self {
            Event::Arrival(_) => EventKind::RequestArrival,
            Event::InstanceReady(_) => EventKind::InstanceReady,
            Event::Complete { .. } => EventKind::RequestComplete,
            Event::IdleExpiry(_) => EventKind::IdleExpiry,
            Event::ScaleEvaluation => EventKind::ScaleEvaluation,
            Event::MetricsSample => EventKind::MetricsSample,
            Event::ConcurrencySample => EventKind::ConcurrencySample,
        }
    }

    fn subject(&self) -> String {
        match self {
            Event::Arrival(r) => format!("req{r}"),
            Event::InstanceReady(i) | Event::IdleExpiry(i) => format!("inst{i}"),
            Event::Complete { instance, request } => format!("req{request}@inst{instance}"),
            _ => String::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Knobs that do not change simulated behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub record_event_log: bool,
    /// Record a usage sample after every event that changed memory.
    pub record_usage_trace: bool,
    /// Run the full O(instances) consistency check after every event.
    pub check_invariants: bool,
    pub metrics_period_ms: TimeMs,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { record_event_log: false, record_usage_trace: false, check_invariants: false, metrics_period_ms: 60_000 }
    }
}

/// Lifetime of one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceSpan {
    pub id: InstanceId,
    pub function: FunctionIdx,
    pub created_ms: TimeMs,
    pub ready_ms: Option<TimeMs>,
    pub terminated_ms: Option<TimeMs>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    /// Indexed by instance id.
    pub instances: Vec<InstanceSpan>,
    pub records: Vec<InvocationRecord>,
    /// Periodic samples, including the warm-up cutoff and the end mark.
    pub samples: Vec<UsageSample>,
    pub window_start: UsageSample,
    pub window_end: UsageSample,
    /// Cumulative usage once the last request completed.
    pub final_sample: UsageSample,
    pub usage_trace: Option<Vec<UsageSample>>,
    pub event_log: Option<Vec<LogEntry>>,
    pub events_processed: u64,
    pub peak_node_utilization: f64,
    /// Virtual time at which the last request completed (or the end mark).
    pub finished_at: TimeMs,
}

struct AsyncState {
    target: f64,
    cc: u32,
    sample_period: TimeMs,
    eval_period: TimeMs,
    next_eval_at: TimeMs,
    meters: Vec<ConcurrencyMeter>,
    windows: Vec<ConcurrencyWindow<f64>>,
}

pub struct Simulation<'a> {
    plan: &'a InvocationPlan,
    policy: PolicyConfig,
    options: SimOptions,
    cluster: Cluster,
    router: Router,
    overhead: RngStream,
    records: Vec<InvocationRecord>,
    spans: Vec<InstanceSpan>,
    next_arrival: usize,
    outstanding: u64,
    ready_events: HashMap<InstanceId, EventHandle>,
    expiry_events: HashMap<InstanceId, EventHandle>,
    async_state: Option<AsyncState>,
    samples: Vec<UsageSample>,
    usage_trace: Option<Vec<UsageSample>>,
    last_memory: (u64, u64),
    end_ms: TimeMs,
}

impl<'a> Simulation<'a> {
    pub fn new(
        plan: &'a InvocationPlan,
        policy: PolicyConfig,
        shape: ClusterShape,
        cost: CostModel,
        seed: u64,
        options: SimOptions,
    ) -> Self {
        let n = plan.functions.len();
        let async_state = match policy {
            PolicyConfig::SyncKeepalive { .. } => None,
            PolicyConfig::AsyncWindow {
                window_ms,
                utilization_target,
                container_concurrency,
                evaluation_period_ms,
                sample_period_ms,
            } => Some(AsyncState {
                target: utilization_target,
                cc: container_concurrency,
                sample_period: sample_period_ms,
                eval_period: evaluation_period_ms,
                next_eval_at: evaluation_period_ms,
                meters: vec![ConcurrencyMeter::default(); n],
                windows: vec![ConcurrencyWindow::for_periods(window_ms, sample_period_ms); n],
            }),
        };
        let records = plan
            .entries
            .iter()
            .map(|e| InvocationRecord {
                function: e.function,
                arrival_ms: e.arrival_ms,
                dispatch_ms: 0,
                completion_ms: 0,
                expected_duration_ms: e.duration_ms,
                cold: false,
            })
            .collect();
        Self {
            plan,
            policy,
            options,
            cluster: Cluster::new(shape, cost, seed),
            router: Router::new(n),
            overhead: RngStream::new(seed, "warm-path-overhead"),
            records,
            spans: Vec::new(),
            next_arrival: 0,
            outstanding: 0,
            ready_events: HashMap::new(),
            expiry_events: HashMap::new(),
            async_state,
            samples: Vec::new(),
            usage_trace: options.record_usage_trace.then(Vec::new),
            last_memory: (u64::MAX, u64::MAX),
            end_ms: plan.total_duration_ms,
        }
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn outstanding(&self) -> u64 {
        self.outstanding
    }

    /// Replays the whole plan: runs to the end mark, then keeps going until
    /// every request that arrived has completed.
    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        let mut engine: Engine<Event> = Engine::new(self.options.record_event_log);
        let q = &mut engine.queue;
        q.schedule(0, Event::MetricsSample)?;
        if let Some(a) = &self.async_state {
            q.schedule(a.sample_period, Event::ConcurrencySample)?;
        }
        if let Some(first) = self.plan.entries.first() {
            q.schedule(first.arrival_ms, Event::Arrival(0))?;
            self.next_arrival = 1;
        }
        let end = self.end_ms;
        engine.run(&mut self, end)?;
        engine.run_while(&mut self, TimeMs::MAX, |s| s.outstanding > 0)?;
        let finished_at = engine.now().max(self.end_ms);

        let window_start = self.sample_at(self.plan.warmup_cutoff_ms);
        let window_end = self.sample_at(self.end_ms);
        Ok(SimOutcome {
            instances: self.spans,
            records: self.records,
            samples: self.samples,
            window_start,
            window_end,
            final_sample: self.cluster.usage_sample(finished_at),
            usage_trace: self.usage_trace,
            event_log: engine.take_log(),
            events_processed: engine.events_processed(),
            peak_node_utilization: self.cluster.peak_node_utilization(),
            finished_at,
        })
    }

    fn sample_at(&self, t: TimeMs) -> UsageSample {
        self.samples
            .iter()
            .find(|s| s.timestamp_ms == t)
            .cloned()
            .expect("metrics sample scheduled at every window mark")
    }

    fn next_metrics_time(&self, now: TimeMs) -> Option<TimeMs> {
        let period = self.options.metrics_period_ms.max(1);
        let periodic = (now / period + 1) * period;
        let marks = [self.plan.warmup_cutoff_ms, self.end_ms];
        let next = marks.into_iter().filter(|&m| m > now).chain([periodic]).min()?;
        (now < self.end_ms || self.outstanding > 0).then_some(next)
    }

    /// Occupies a slot on `instance` for `req`. The request is dispatched
    /// after the warm-path overhead and completes after its duration.
    fn assign(&mut self, q: &mut EventQueue<Event>, req: PendingRequest, instance: InstanceId, now: TimeMs) -> Result<(), SimError> {
        if let Some(h) = self.expiry_events.remove(&instance) {
            q.cancel(h);
        }
        self.router.unmark_idle(req.function, instance);
        self.cluster.begin_execution(instance, now)?;
        let overhead = self.cluster.cost().warm_path_overhead_ms.draw(&mut self.overhead.keyed(u64::from(req.request)));
        let rec = &mut self.records[req.request as usize];
        rec.dispatch_ms = now + overhead;
        q.schedule(rec.dispatch_ms + rec.expected_duration_ms, Event::Complete { instance, request: req.request })?;
        Ok(())
    }

    fn on_arrival(&mut self, q: &mut EventQueue<Event>, idx: RequestIdx, now: TimeMs) -> Result<(), SimError> {
        self.outstanding += 1;
        let function = self.plan.entries[idx as usize].function;
        let req = PendingRequest { request: idx, function, enqueued_at: now, binding: None };
        match &mut self.async_state {
            None => {
                if let Some(inst) = self.router.most_recent_idle(function) {
                    self.assign(q, req, inst, now)?;
                } else {
                    self.records[idx as usize].cold = true;
                    self.create_bound(q, req, now)?;
                }
            }
            Some(a) => {
                a.meters[function as usize].change(now, 1);
                let slot = if a.cc == 1 {
                    self.router.most_recent_idle(function)
                } else {
                    self.router.shared_slot(function, &self.cluster)
                };
                match slot {
                    Some(inst) => self.assign(q, req, inst, now)?,
                    None => {
                        self.records[idx as usize].cold = true;
                        self.router.enqueue(req);
                    }
                }
            }
        }

        if let Some(next) = self.plan.entries.get(self.next_arrival) {
            q.schedule(next.arrival_ms, Event::Arrival(self.next_arrival as RequestIdx))?;
            self.next_arrival += 1;
        }
        Ok(())
    }

    /// Sync path: starts an instance dedicated to `req`, or parks the
    /// request until memory frees up. Returns false when out of memory.
    fn create_bound(&mut self, q: &mut EventQueue<Event>, req: PendingRequest, now: TimeMs) -> Result<bool, SimError> {
        let mem = self.plan.functions[req.function as usize].memory_mb;
        match self.cluster.start_instance(req.function, mem, 1, now) {
            Ok((id, ready_at)) => {
                self.record_start(id, req.function, now);
                self.router.add_instance(req.function, id);
                self.router.bind(req, id);
                self.ready_events.insert(id, q.schedule(ready_at, Event::InstanceReady(id))?);
                Ok(true)
            }
            Err(ClusterError::ClusterOutOfMemory { .. }) => {
                self.router.wait_for_memory(req);
                Ok(false)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn record_start(&mut self, id: InstanceId, function: FunctionIdx, now: TimeMs) {
        debug_assert_eq!(id as usize, self.spans.len());
        self.spans.push(InstanceSpan { id, function, created_ms: now, ready_ms: None, terminated_ms: None });
    }

    fn on_ready(&mut self, q: &mut EventQueue<Event>, id: InstanceId, now: TimeMs) -> Result<(), SimError> {
        self.ready_events.remove(&id);
        self.cluster.mark_ready(id, now)?;
        self.spans[id as usize].ready_ms = Some(now);
        let function = self.cluster.instance(id).expect("ready instance exists").function;
        self.router.mark_idle(function, id, now);
        match self.async_state {
            None => {
                let req = self.router.take_binding(id).ok_or(RouterError::BindingViolation(id))?;
                self.assign(q, req, id, now)?;
            }
            Some(_) => self.drain_queue(q, function, id, now)?,
        }
        Ok(())
    }

    /// Hands queued requests to `instance` while it has free slots.
    fn drain_queue(&mut self, q: &mut EventQueue<Event>, function: FunctionIdx, instance: InstanceId, now: TimeMs) -> Result<(), SimError> {
        loop {
            let room = self.cluster.instance(instance).is_some_and(|i| i.in_flight < i.concurrency_limit);
            if !room {
                return Ok(());
            }
            let Some(req) = self.router.dequeue(function) else {
                return Ok(());
            };
            self.assign(q, req, instance, now)?;
        }
    }

    fn on_complete(&mut self, q: &mut EventQueue<Event>, instance: InstanceId, request: RequestIdx, now: TimeMs) -> Result<(), SimError> {
        let rec = &mut self.records[request as usize];
        rec.completion_ms = now;
        let work = rec.expected_duration_ms;
        let function = rec.function;
        self.outstanding -= 1;
        let idle = self.cluster.finish_execution(instance, now, work)?;
        if idle {
            self.router.mark_idle(function, instance, now);
        }
        match self.policy {
            PolicyConfig::SyncKeepalive { keepalive_ms } => {
                if let Some(req) = self.router.take_awaiting_memory_for(function) {
                    self.assign(q, req, instance, now)?;
                } else {
                    self.expiry_events.insert(instance, q.schedule(now + keepalive_ms, Event::IdleExpiry(instance))?);
                }
            }
            PolicyConfig::AsyncWindow { .. } => {
                if let Some(a) = &mut self.async_state {
                    a.meters[function as usize].change(now, -1);
                }
                self.drain_queue(q, function, instance, now)?;
            }
        }
        Ok(())
    }

    fn terminate(&mut self, q: &mut EventQueue<Event>, id: InstanceId, now: TimeMs) -> Result<(), SimError> {
        if let Some(h) = self.ready_events.remove(&id) {
            q.cancel(h);
        }
        if let Some(h) = self.expiry_events.remove(&id) {
            q.cancel(h);
        }
        let inst = self.cluster.terminate_instance(id, now)?;
        self.spans[id as usize].terminated_ms = Some(now);
        self.router.remove_instance(inst.function, id);
        Ok(())
    }

    fn on_idle_expiry(&mut self, q: &mut EventQueue<Event>, id: InstanceId, now: TimeMs) -> Result<(), SimError> {
        self.expiry_events.remove(&id);
        self.terminate(q, id, now)?;
        while let Some(req) = self.router.pop_awaiting_memory() {
            let mem = self.plan.functions[req.function as usize].memory_mb;
            if self.cluster.place(mem).is_none() {
                self.router.push_front_awaiting_memory(req);
                break;
            }
            self.create_bound(q, req, now)?;
        }
        Ok(())
    }

    fn on_concurrency_sample(&mut self, q: &mut EventQueue<Event>, now: TimeMs) -> Result<(), SimError> {
        let a = self.async_state.as_mut().expect("async policy");
        for (meter, window) in a.meters.iter_mut().zip(a.windows.iter_mut()) {
            window.push(now, meter.take(now));
        }
        if now >= a.next_eval_at {
            a.next_eval_at += a.eval_period;
            q.schedule(now, Event::ScaleEvaluation)?;
        }
        if now < self.end_ms || self.outstanding > 0 {
            q.schedule(now + a.sample_period, Event::ConcurrencySample)?;
        }
        Ok(())
    }

    fn on_scale_evaluation(&mut self, q: &mut EventQueue<Event>, now: TimeMs) -> Result<(), SimError> {
        let (target, cc) = {
            let a = self.async_state.as_ref().expect("async policy");
            (a.target, a.cc)
        };
        for f in 0..self.plan.functions.len() as FunctionIdx {
            let avg = self.async_state.as_ref().expect("async policy").windows[f as usize].average();
            let desired = desired_instances(avg, target, cc);
            match scaling_action(desired, self.router.live_count(f)) {
                ScalingAction::Hold => {}
                ScalingAction::Create(n) => {
                    let mem = self.plan.functions[f as usize].memory_mb;
                    for _ in 0..n {
                        match self.cluster.start_instance(f, mem, cc, now) {
                            Ok((id, ready_at)) => {
                                self.record_start(id, f, now);
                                self.router.add_instance(f, id);
                                self.ready_events.insert(id, q.schedule(ready_at, Event::InstanceReady(id))?);
                            }
                            // Whatever is missing is retried at the next evaluation.
                            Err(ClusterError::ClusterOutOfMemory { .. }) => break,
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
                ScalingAction::Retire(n) => {
                    let mut victims: Vec<InstanceId> = self.router.oldest_idle(f).take(n as usize).collect();
                    if victims.len() < n as usize && self.router.queue_len(f) == 0 {
                        let booting = self
                            .router
                            .instances(f)
                            .iter()
                            .rev()
                            .copied()
                            .filter(|&id| self.ready_events.contains_key(&id));
                        victims.extend(booting.take(n as usize - victims.len()));
                    }
                    for id in victims {
                        self.terminate(q, id, now)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn on_metrics_sample(&mut self, q: &mut EventQueue<Event>, now: TimeMs) -> Result<(), SimError> {
        self.samples.push(self.cluster.usage_sample(now));
        if let Some(next) = self.next_metrics_time(now) {
            q.schedule(next, Event::MetricsSample)?;
        }
        Ok(())
    }

    fn after_event(&mut self, kind: EventKind, now: TimeMs) -> Result<(), SimError> {
        if let Some(trace) = &mut self.usage_trace {
            let s = self.cluster.usage_sample(now);
            let mem = (s.total_instance_memory_mb, s.busy_instance_memory_mb);
            if mem != self.last_memory {
                self.last_memory = mem;
                if trace.last().is_some_and(|l| l.timestamp_ms == now) {
                    trace.pop();
                }
                trace.push(s);
            }
        }
        if self.options.check_invariants || kind == EventKind::MetricsSample {
            self.cluster.check_all().map_err(SimError::Invariant)?;
            let bound = self.router.binding_count();
            if self.async_state.is_none() && bound != self.ready_events.len() {
                return Err(SimError::Invariant(format!(
                    "{bound} bindings but {} instances booting",
                    self.ready_events.len()
                )));
            }
        } else {
            self.cluster.check_nodes().map_err(SimError::Invariant)?;
        }
        Ok(())
    }
}

impl Handler<Event> for Simulation<'_> {
    type Error = SimError;

    fn handle(&mut self, q: &mut EventQueue<Event>, event: SimEvent<Event>) -> Result<(), SimError> {
        let now = event.fire_at;
        let kind = event.payload.kind();
        match event.payload {
            Event::Arrival(r) => self.on_arrival(q, r, now)?,
            Event::InstanceReady(id) => self.on_ready(q, id, now)?,
            Event::Complete { instance, request } => self.on_complete(q, instance, request, now)?,
            Event::IdleExpiry(id) => self.on_idle_expiry(q, id, now)?,
            Event::ScaleEvaluation => self.on_scale_evaluation(q, now)?,
            Event::MetricsSample => self.on_metrics_sample(q, now)?,
            Event::ConcurrencySample => self.on_concurrency_sample(q, now)?,
        }
        self.after_event(kind, now)
    }
}
