//! Deterministic discrete-event simulator of a serverless cluster.
//!
//! Replays per-minute invocation traces against a simulated set of worker
//! nodes under either a fixed-keepalive (synchronous) or a window-averaged
//! concurrency (asynchronous) autoscaling policy and reports tail slowdown,
//! memory efficiency, instance churn and control-plane CPU overhead.

pub mod cluster;
pub mod config;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod router;
pub mod scalar;
pub mod sim;
pub mod stats;
pub mod trace;

pub use scalar::Scalar;

/// Default floating point type of the metric and policy arithmetic.
pub type Real = f64;
pub type SampleWindow = policy::ConcurrencyWindow<Real>;
pub type LifecycleRates = metrics::LifecycleRates<Real>;
pub type CpuOverhead = metrics::CpuOverhead<Real>;
