//! Autoscaling policies.
//!
//! The synchronous policy creates an instance on the request's critical
//! path whenever no idle instance exists and reaps instances after a fixed
//! keepalive. The asynchronous policy keeps a sliding window of per-function
//! concurrency samples and periodically reconciles the instance count
//! against `ceil(window average / (target * container concurrency))`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::TimeMs;
use crate::scalar::Scalar;

fn default_evaluation_period() -> TimeMs {
    2_000
}

fn default_sample_period() -> TimeMs {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyConfig {
    SyncKeepalive {
        keepalive_ms: TimeMs,
    },
    AsyncWindow {
        window_ms: TimeMs,
        utilization_target: f64,
        container_concurrency: u32,
        #[serde(default = "default_evaluation_period")]
        evaluation_period_ms: TimeMs,
        #[serde(default = "default_sample_period")]
        sample_period_ms: TimeMs,
    },
}

impl PolicyConfig {
    pub fn sync(keepalive_ms: TimeMs) -> Self {
        PolicyConfig::SyncKeepalive { keepalive_ms }
    }

    pub fn async_window(window_ms: TimeMs, utilization_target: f64, container_concurrency: u32) -> Self {
        PolicyConfig::AsyncWindow {
            window_ms,
            utilization_target,
            container_concurrency,
            evaluation_period_ms: default_evaluation_period(),
            sample_period_ms: default_sample_period(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::SyncKeepalive { .. } => "sync-keepalive",
            PolicyConfig::AsyncWindow { .. } => "async-window",
        }
    }

    /// Concurrency limit given to every instance.
    pub fn container_concurrency(&self) -> u32 {
        match *self {
            PolicyConfig::SyncKeepalive { .. } => 1,
            PolicyConfig::AsyncWindow { container_concurrency, .. } => container_concurrency,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            PolicyConfig::SyncKeepalive { keepalive_ms } => {
                if keepalive_ms == 0 {
                    return Err("keepalive_ms must be positive".into());
                }
            }
            PolicyConfig::AsyncWindow {
                window_ms,
                utilization_target,
                container_concurrency,
                evaluation_period_ms,
                sample_period_ms,
            } => {
                if !(utilization_target > 0.0 && utilization_target <= 1.0) {
                    return Err(format!("utilization_target must lie in (0, 1], got {utilization_target}"));
                }
                if container_concurrency == 0 {
                    return Err("container_concurrency must be at least 1".into());
                }
                if sample_period_ms == 0 || evaluation_period_ms == 0 {
                    return Err("sample and evaluation periods must be positive".into());
                }
                if window_ms < sample_period_ms {
                    return Err("window_ms must be at least sample_period_ms".into());
                }
            }
        }
        Ok(())
    }
}

/// `ceil(window_avg / (target * cc))`, zero when the average is zero.
pub fn desired_instances<T: Scalar>(window_avg: T, target: T, container_concurrency: u32) -> u32 {
    if !(window_avg > T::zero()) {
        return 0;
    }
    let capacity = target * T::of_u64(u64::from(container_concurrency.max(1)));
    (window_avg / capacity).robust_ceil().to_u32().unwrap_or(u32::MAX)
}

/// Fixed-capacity sliding window of concurrency samples.
///
/// The running sum is recomputed from scratch once per full rotation so
/// floating point drift stays bounded, and an all-zero window always
/// averages to exactly zero.
#[derive(Debug, Clone)]
pub struct ConcurrencyWindow<T> {
    capacity: usize,
    samples: VecDeque<(TimeMs, T)>,
    sum: T,
    nonzero: usize,
    since_resum: usize,
}

impl<T: Scalar> ConcurrencyWindow<T> {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
            sum: T::zero(),
            nonzero: 0,
            since_resum: 0,
        }
    }

    /// Capacity for a window length and sampling period.
    pub fn for_periods(window_ms: TimeMs, sample_period_ms: TimeMs) -> Self {
        Self::new((window_ms / sample_period_ms.max(1)) as usize)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, timestamp_ms: TimeMs, concurrency: T) {
        debug_assert!(concurrency >= T::zero());
        if self.samples.len() == self.capacity {
            let (_, old) = self.samples.pop_front().expect("full window");
            self.sum = self.sum - old;
            if old != T::zero() {
                self.nonzero -= 1;
            }
        }
        self.samples.push_back((timestamp_ms, concurrency));
        self.sum = self.sum + concurrency;
        if concurrency != T::zero() {
            self.nonzero += 1;
        }
        self.since_resum += 1;
        if self.since_resum >= self.capacity {
            self.sum = self.samples.iter().map(|&(_, v)| v).sum();
            self.since_resum = 0;
        }
    }

    /// Mean over the samples present; zero for an empty or all-zero window.
    pub fn average(&self) -> T {
        if self.nonzero == 0 {
            return T::zero();
        }
        (self.sum / T::of_u64(self.samples.len() as u64)).max(T::zero())
    }

    pub fn is_all_zero(&self) -> bool {
        self.nonzero == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = (TimeMs, T)> + '_ {
        self.samples.iter().copied()
    }
}

/// Time-weighted concurrency over each sampling period: the integral of
/// `queued + executing` divided by the period length.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConcurrencyMeter {
    current: u64,
    last_change: TimeMs,
    area: u64,
    period_start: TimeMs,
}

impl ConcurrencyMeter {
    pub fn current(&self) -> u64 {
        self.current
    }

    pub fn change(&mut self, now: TimeMs, delta: i64) {
        self.area += self.current * (now - self.last_change);
        self.last_change = now;
        self.current = self.current.checked_add_signed(delta).expect("concurrency went negative");
    }

    /// Closes the current period and returns its average concurrency.
    pub fn take<T: Scalar>(&mut self, now: TimeMs) -> T {
        self.area += self.current * (now - self.last_change);
        self.last_change = now;
        let span = now - self.period_start;
        let area = std::mem::take(&mut self.area);
        self.period_start = now;
        if span == 0 {
            return T::of_u64(self.current);
        }
        T::of_u64(area) / T::of_u64(span)
    }
}

/// What one evaluation decided for a function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingAction {
    Hold,
    Create(u32),
    Retire(u32),
}

/// Compares desired against live (creating + idle + busy) instances.
pub fn scaling_action(desired: u32, live: u32) -> ScalingAction {
    use std::cmp::Ordering::*;
    match desired.cmp(&live) {
        Greater => ScalingAction::Create(desired - live),
        Less => ScalingAction::Retire(live - desired),
        Equal => ScalingAction::Hold,
    }
}
