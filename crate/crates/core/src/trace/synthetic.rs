use rand::Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use super::{DurationStats, FunctionProfile, TraceError};
use crate::engine::RngStream;

/// Positive-valued parameter distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ValueDist {
    Constant { value: f64 },
    /// Log-normal given by its arithmetic mean and the standard deviation
    /// of the underlying normal.
    LogNormal { mean: f64, sigma: f64 },
}

impl ValueDist {
    pub fn mean(&self) -> f64 {
        match *self {
            ValueDist::Constant { value } => value,
            ValueDist::LogNormal { mean, .. } => mean,
        }
    }

    fn sampler(&self) -> Result<Sampler, TraceError> {
        match *self {
            ValueDist::Constant { value } if value > 0.0 => Ok(Sampler::Constant(value)),
            ValueDist::LogNormal { mean, sigma } if mean > 0.0 && sigma > 0.0 => {
                let mu = mean.ln() - sigma * sigma / 2.0;
                LogNormal::new(mu, sigma)
                    .map(Sampler::LogNormal)
                    .map_err(|e| TraceError::Precondition(e.to_string()))
            }
            other => Err(TraceError::Precondition(format!(
                "distribution parameters must be positive, got {other:?}"
            ))),
        }
    }
}

enum Sampler {
    Constant(f64),
    LogNormal(LogNormal<f64>),
}

impl Sampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Constant(v) => *v,
            Sampler::LogNormal(d) => d.sample(rng),
        }
    }
}

/// How a function's rate turns into per-minute counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountProcess {
    /// Independent Poisson draw per minute.
    #[default]
    Poisson,
    /// Evenly spread: `floor((m + 1) r + phase) - floor(m r + phase)` with a
    /// random phase per function. Integer rates give exactly `r` per minute
    /// and rates below one behave like periodic timers.
    Fluid,
}

/// Shape of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_functions: usize,
    pub minutes: usize,
    /// Per-function mean invocations per minute. Individual rates are
    /// rescaled so their sum is exactly `num_functions * mean`.
    pub rate_per_minute: ValueDist,
    /// Per-function median execution time in milliseconds.
    pub duration_ms: ValueDist,
    pub memory_mb: ValueDist,
    #[serde(default)]
    pub counts: CountProcess,
    /// Fraction of functions (chosen at random) that use the fluid process
    /// regardless of `counts`, mimicking timer-triggered functions.
    #[serde(default)]
    pub timer_fraction: f64,
    /// Period in minutes of the timer functions. When unset, timers draw
    /// their rate from `rate_per_minute` like every other function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timer_period_minutes: Option<ValueDist>,
}

impl SyntheticSpec {
    /// Expected invocations per minute summed over the functions that draw
    /// from `rate_per_minute`.
    pub fn aggregate_rate_per_minute(&self) -> f64 {
        self.num_functions as f64 * self.rate_per_minute.mean()
    }
}

/// Percentile spread around the median, loosely following the skew of
/// production function durations.
const DURATION_SHAPE: [f64; 7] = [0.5, 0.6, 0.85, 1.0, 1.2, 2.0, 3.0];

/// Deterministic synthetic profiles.
pub fn gen_synthetic_trace(spec: &SyntheticSpec, seed: u64) -> Result<Vec<FunctionProfile>, TraceError> {
    if spec.num_functions == 0 || spec.minutes == 0 {
        return Err(TraceError::Precondition("synthetic trace needs functions and minutes".into()));
    }
    if !(0.0..=1.0).contains(&spec.timer_fraction) {
        return Err(TraceError::Precondition("timer_fraction must lie in [0, 1]".into()));
    }
    let rate_dist = spec.rate_per_minute.sampler()?;
    let duration_dist = spec.duration_ms.sampler()?;
    let memory_dist = spec.memory_mb.sampler()?;

    let mut shape = RngStream::new(seed, "synthetic-shape");
    let counts_stream = RngStream::new(seed, "synthetic-counts");

    let period_dist = spec.timer_period_minutes.map(|d| d.sampler()).transpose()?;

    // (raw rate, median duration, memory, timer) per function.
    let mut drawn = Vec::with_capacity(spec.num_functions);
    for _ in 0..spec.num_functions {
        let rate = rate_dist.sample(shape.rng());
        let median = duration_dist.sample(shape.rng()).max(1.0);
        let memory = memory_dist.sample(shape.rng()).round().clamp(1.0, 1_048_576.0) as u32;
        let is_timer = shape.rng().random::<f64>() < spec.timer_fraction;
        let rate = match (&period_dist, is_timer) {
            (Some(p), true) => 1.0 / p.sample(shape.rng()).max(1.0),
            _ => rate,
        };
        drawn.push((rate, median, memory, is_timer));
    }
    // Rescale the rates that came from `rate_per_minute` so their sum hits
    // the configured mean exactly; fixed-period timers keep their rate.
    let rescaled = |&(_, _, _, timer): &(f64, f64, u32, bool)| !(timer && period_dist.is_some());
    let n_rescaled = drawn.iter().filter(|d| rescaled(d)).count();
    let raw_sum: f64 = drawn.iter().filter(|d| rescaled(d)).map(|d| d.0).sum();
    let scale = if raw_sum > 0.0 { n_rescaled as f64 * spec.rate_per_minute.mean() / raw_sum } else { 1.0 };

    let width = spec.num_functions.to_string().len().max(4);
    let mut profiles = Vec::with_capacity(spec.num_functions);
    for (i, d) in drawn.iter().enumerate() {
        let (raw, median, memory, is_timer) = *d;
        let rate = if rescaled(d) { raw * scale } else { raw };
        let mut pct = DURATION_SHAPE.map(|m| (m * median).round().max(1.0));
        for j in 1..7 {
            pct[j] = pct[j].max(pct[j - 1]);
        }

        let mut rng = counts_stream.keyed(i as u64);
        let process = if is_timer { CountProcess::Fluid } else { spec.counts };
        let per_minute_counts = match process {
            CountProcess::Poisson => {
                let poisson = Poisson::new(rate).map_err(|e| TraceError::Precondition(e.to_string()))?;
                (0..spec.minutes).map(|_| poisson.sample(&mut rng) as u32).collect()
            }
            CountProcess::Fluid => {
                let phase: f64 = rng.random();
                (0..spec.minutes)
                    .map(|m| {
                        let upto = |m: usize| (m as f64 * rate + phase).floor();
                        (upto(m + 1) - upto(m)) as u32
                    })
                    .collect()
            }
        };
        profiles.push(FunctionProfile {
            function_id: format!("f{i:0width$}"),
            memory_mb: memory,
            durations: DurationStats::from_percentiles(pct),
            per_minute_counts,
        });
    }
    Ok(profiles)
}


#[cfg(test)]
mod timer_tests {
    use super::*;

    #[test]
    fn fixed_period_timers_fire_on_schedule() {
        let s = SyntheticSpec {
            num_functions: 20,
            minutes: 120,
            rate_per_minute: ValueDist::Constant { value: 4.0 },
            duration_ms: ValueDist::Constant { value: 100.0 },
            memory_mb: ValueDist::Constant { value: 128.0 },
            counts: CountProcess::Poisson,
            timer_fraction: 1.0,
            timer_period_minutes: Some(ValueDist::Constant { value: 15.0 }),
        };
        for p in gen_synthetic_trace(&s, 4).unwrap() {
            assert_eq!(p.total_invocations(), 8);
        }
    }
}
