//! Function profiles, trace ingestion and invocation timeline expansion.

mod generate;
mod parse;
mod sample;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use generate::{generate_invocations, InvocationPlan, PlanEntry, PlanFunction};
pub use parse::{parse_trace, parse_trace_readers, write_trace, TracePaths};
pub use sample::{log_bucket, sample_functions};
pub use synthetic::{gen_synthetic_trace, CountProcess, SyntheticSpec, ValueDist};

/// Quantile positions of the seven percentile columns, as fractions.
pub const PERCENTILE_POINTS: [f64; 7] = [0.0, 0.01, 0.25, 0.50, 0.75, 0.99, 1.0];

/// Column names of the percentile fields in the durations CSV.
pub const PERCENTILE_COLUMNS: [&str; 7] = [
    "percentile_Average_0",
    "percentile_Average_1",
    "percentile_Average_25",
    "percentile_Average_50",
    "percentile_Average_75",
    "percentile_Average_99",
    "percentile_Average_100",
];

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file} line {line}: function `{id}` is not present in {missing_from}")]
    UnknownFunctionId {
        file: String,
        line: usize,
        id: String,
        missing_from: String,
    },
    #[error("{file} line {line}: percentiles of `{id}` are not non-decreasing")]
    NonMonotonePercentiles { file: String, line: usize, id: String },
    #[error("{file} line {line}: negative count {value} for `{id}` in minute {minute}")]
    NegativeCount {
        file: String,
        line: usize,
        id: String,
        minute: usize,
        value: i64,
    },
    #[error("{file} line {line}: {message}")]
    InvalidValue { file: String, line: usize, message: String },
    #[error("requested {requested} functions but only {available} have invocations")]
    InsufficientFunctions { requested: usize, available: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-function execution time statistics in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub average_ms: f64,
    /// Values at [`PERCENTILE_POINTS`].
    pub percentiles_ms: [f64; 7],
}

impl DurationStats {
    /// All percentiles equal to `ms`.
    pub fn constant(ms: f64) -> Self {
        Self { average_ms: ms, percentiles_ms: [ms; 7] }
    }

    /// Builds stats from percentile values, taking the average from the
    /// piecewise-linear interpolant.
    pub fn from_percentiles(percentiles_ms: [f64; 7]) -> Self {
        let mut stats = Self { average_ms: 0.0, percentiles_ms };
        stats.average_ms = stats.interpolant_mean();
        stats
    }

    pub fn is_monotone(&self) -> bool {
        self.percentiles_ms.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn min_ms(&self) -> f64 {
        self.percentiles_ms[0]
    }

    pub fn max_ms(&self) -> f64 {
        self.percentiles_ms[6]
    }

    /// Inverse CDF: linear interpolation between the percentile points.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let p = &self.percentiles_ms;
        for i in 0..6 {
            let (q0, q1) = (PERCENTILE_POINTS[i], PERCENTILE_POINTS[i + 1]);
            if u <= q1 {
                let frac = (u - q0) / (q1 - q0);
                return p[i] + frac * (p[i + 1] - p[i]);
            }
        }
        p[6]
    }

    /// Mean of the piecewise-linear inverse CDF (trapezoids over the
    /// quantile axis).
    pub fn interpolant_mean(&self) -> f64 {
        let p = &self.percentiles_ms;
        (0..6)
            .map(|i| (PERCENTILE_POINTS[i + 1] - PERCENTILE_POINTS[i]) * (p[i] + p[i + 1]) / 2.0)
            .sum()
    }

    /// Draws one integer duration, always in `[p0, p100]` and at least 1 ms.
    pub fn draw_ms(&self, u: f64) -> u64 {
        let (lo, hi) = self.integer_support();
        (self.quantile(u).round() as u64).clamp(lo, hi)
    }

    fn integer_support(&self) -> (u64, u64) {
        let (mut lo, mut hi) = (self.min_ms().ceil(), self.max_ms().floor());
        if lo > hi {
            lo = self.min_ms().round();
            hi = lo;
        }
        ((lo as u64).max(1), (hi as u64).max(1))
    }
}

/// One row of the trace: memory footprint, duration statistics and
/// per-minute invocation counts of a function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionProfile {
    pub function_id: String,
    pub memory_mb: u32,
    pub durations: DurationStats,
    pub per_minute_counts: Vec<u32>,
}

impl FunctionProfile {
    pub fn total_invocations(&self) -> u64 {
        self.per_minute_counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.memory_mb == 0 {
            return Err(format!("function `{}` has zero memory", self.function_id));
        }
        if !self.durations.is_monotone() {
            return Err(format!("function `{}` has non-monotone percentiles", self.function_id));
        }
        let avg = self.durations.average_ms;
        if !(avg >= self.durations.min_ms() && avg <= self.durations.max_ms()) {
            return Err(format!(
                "function `{}` average {avg} outside [p0, p100]",
                self.function_id
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolant_mean_matches_hand_integral() {
        // p0=100, p50=100, p100=900 with the interior points on the chords:
        // half the mass at 100, the other half uniform on [100, 900] -> 300.
        let d = DurationStats::from_percentiles([100.0, 100.0, 100.0, 100.0, 500.0, 884.0, 900.0]);
        assert!((d.average_ms - 300.0).abs() < 1e-9);
    }

    #[test]
    fn quantile_hits_given_points() {
        let d = DurationStats::from_percentiles([1.0, 2.0, 10.0, 20.0, 40.0, 90.0, 100.0]);
        for (q, v) in PERCENTILE_POINTS.iter().zip(d.percentiles_ms) {
            assert!((d.quantile(*q) - v).abs() < 1e-9);
        }
        assert!((d.quantile(0.375) - 15.0).abs() < 1e-9);
    }

    #[test]
    fn draw_respects_support() {
        let d = DurationStats::from_percentiles([100.4, 101.0, 150.0, 200.0, 250.0, 300.0, 300.6]);
        assert_eq!(d.draw_ms(0.0), 101);
        assert_eq!(d.draw_ms(1.0), 300);
        let tiny = DurationStats::constant(0.2);
        assert_eq!(tiny.draw_ms(0.5), 1);
    }
}
