use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FunctionProfile, TraceError};
use crate::engine::{label_hash, RngStream, TimeMs};

pub const MINUTE_MS: TimeMs = 60_000;

/// Function table entry of a plan. Entries refer to functions by their
/// index in [`InvocationPlan::functions`], which is sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanFunction {
    pub id: String,
    pub memory_mb: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub function: u32,
    pub arrival_ms: TimeMs,
    pub duration_ms: TimeMs,
}

/// Time-ordered invocation timeline replayed by the simulator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationPlan {
    pub functions: Vec<PlanFunction>,
    pub entries: Vec<PlanEntry>,
    pub total_duration_ms: TimeMs,
    pub warmup_cutoff_ms: TimeMs,
}

impl InvocationPlan {
    /// Builds a plan from explicit `(function id, arrival, duration)` triples.
    /// Entries are sorted by `(arrival, function id, input order)`.
    pub fn from_entries(
        functions: Vec<PlanFunction>,
        entries: impl IntoIterator<Item = (String, TimeMs, TimeMs)>,
        total_duration_ms: TimeMs,
        warmup_cutoff_ms: TimeMs,
    ) -> Result<Self, TraceError> {
        let mut functions = functions;
        functions.sort_by(|a, b| a.id.cmp(&b.id));
        let mut plan_entries = Vec::new();
        for (id, arrival_ms, duration_ms) in entries {
            let function = functions
                .binary_search_by(|f| f.id.as_str().cmp(&id))
                .map_err(|_| TraceError::Precondition(format!("unknown function `{id}`")))?;
            if duration_ms == 0 {
                return Err(TraceError::Precondition(format!("zero duration for `{id}`")));
            }
            plan_entries.push(PlanEntry { function: function as u32, arrival_ms, duration_ms });
        }
        plan_entries.sort_by_key(|e| (e.arrival_ms, e.function));
        Ok(Self { functions, entries: plan_entries, total_duration_ms, warmup_cutoff_ms })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn function_id(&self, idx: u32) -> &str {
        &self.functions[idx as usize].id
    }

    /// SHA-256 over the function table and every entry, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.functions {
            h.update(f.id.as_bytes());
            h.update([0]);
            h.update(f.memory_mb.to_le_bytes());
        }
        for e in &self.entries {
            h.update(e.function.to_le_bytes());
            h.update(e.arrival_ms.to_le_bytes());
            h.update(e.duration_ms.to_le_bytes());
        }
        h.update(self.total_duration_ms.to_le_bytes());
        h.update(self.warmup_cutoff_ms.to_le_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Expands per-minute counts into concrete arrivals.
///
/// Each of the `counts[m]` arrivals of minute `m` lands uniformly at random
/// within that minute; durations come from the inverse CDF of the
/// function's percentiles. Random draws are keyed by function id, so the
/// timeline of one function does not depend on which others are present.
pub fn generate_invocations(
    profiles: &[FunctionProfile],
    experiment_minutes: usize,
    warmup_minutes: usize,
    seed: u64,
) -> Result<InvocationPlan, TraceError> {
    if warmup_minutes >= experiment_minutes {
        return Err(TraceError::Precondition(format!(
            "warm-up ({warmup_minutes} min) must be shorter than the experiment ({experiment_minutes} min)"
        )));
    }
    let mut sorted: Vec<&FunctionProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.function_id.cmp(&b.function_id));
    if sorted.windows(2).any(|w| w[0].function_id == w[1].function_id) {
        return Err(TraceError::Precondition("duplicate function ids".into()));
    }

    let arrivals = RngStream::new(seed, "arrivals");
    let durations = RngStream::new(seed, "durations");
    let mut functions = Vec::with_capacity(sorted.len());
    // (arrival, function, per-function sequence) sorts into the plan order.
    let mut keyed: Vec<(TimeMs, u32, u64, TimeMs)> = Vec::new();
    for (fidx, profile) in sorted.iter().enumerate() {
        profile.validate().map_err(TraceError::Precondition)?;
        if profile.per_minute_counts.len() < experiment_minutes {
            return Err(TraceError::Precondition(format!(
                "function `{}` has {} minutes of data, experiment needs {experiment_minutes}",
                profile.function_id,
                profile.per_minute_counts.len()
            )));
        }
        functions.push(PlanFunction { id: profile.function_id.clone(), memory_mb: profile.memory_mb });
        let key = label_hash(&profile.function_id);
        let mut arrival_rng = arrivals.keyed(key);
        let mut duration_rng = durations.keyed(key);
        let mut seq = 0u64;
        for (minute, &count) in profile.per_minute_counts[..experiment_minutes].iter().enumerate() {
            let base = minute as TimeMs * MINUTE_MS;
            for _ in 0..count {
                let at = base + arrival_rng.random_range(0..MINUTE_MS);
                let duration = profile.durations.draw_ms(duration_rng.random::<f64>());
                keyed.push((at, fidx as u32, seq, duration));
                seq += 1;
            }
        }
    }
    keyed.sort_unstable_by_key(|&(at, f, seq, _)| (at, f, seq));
    let entries = keyed
        .into_iter()
        .map(|(arrival_ms, function, _, duration_ms)| PlanEntry { function, arrival_ms, duration_ms })
        .collect();
    Ok(InvocationPlan {
        functions,
        entries,
        total_duration_ms: experiment_minutes as TimeMs * MINUTE_MS,
        warmup_cutoff_ms: warmup_minutes as TimeMs * MINUTE_MS,
    })
}
