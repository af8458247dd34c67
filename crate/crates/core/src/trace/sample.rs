use rand::seq::{index, SliceRandom};

use super::{FunctionProfile, TraceError};
use crate::engine::RngStream;

/// `floor(log10(total))` for a positive invocation total.
pub fn log_bucket(total: u64) -> u32 {
    debug_assert!(total > 0);
    total.ilog10()
}

/// Stratified sample of `k` functions.
///
/// Functions with at least one invocation are bucketed by
/// `floor(log10(total invocations))`. Each bucket gets `floor(k * share)`
/// slots and the leftover slots go to the largest fractional remainders
/// (ties in seeded random order). Members are chosen uniformly within a
/// bucket. The result keeps the input order.
pub fn sample_functions(
    profiles: &[FunctionProfile],
    k: usize,
    seed: u64,
) -> Result<Vec<FunctionProfile>, TraceError> {
    let eligible: Vec<usize> = (0..profiles.len())
        .filter(|&i| profiles[i].total_invocations() > 0)
        .collect();
    if k > eligible.len() {
        return Err(TraceError::InsufficientFunctions { requested: k, available: eligible.len() });
    }

    let mut buckets: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for &i in &eligible {
        buckets.entry(log_bucket(profiles[i].total_invocations())).or_default().push(i);
    }
    let buckets: Vec<Vec<usize>> = buckets.into_values().collect();

    let population = eligible.len();
    let mut quotas: Vec<usize> = buckets.iter().map(|b| k * b.len() / population).collect();
    let mut leftover = k - quotas.iter().sum::<usize>();

    let mut stream = RngStream::new(seed, "sampling");
    let mut by_remainder: Vec<usize> = (0..buckets.len()).collect();
    by_remainder.shuffle(stream.rng());
    // Remainder of k * n_b / N, compared as integers to stay exact.
    by_remainder.sort_by_key(|&b| std::cmp::Reverse(k * buckets[b].len() % population));
    for &b in &by_remainder {
        if leftover == 0 {
            break;
        }
        if quotas[b] < buckets[b].len() {
            quotas[b] += 1;
            leftover -= 1;
        }
    }

    let mut chosen = Vec::with_capacity(k);
    for (members, &quota) in buckets.iter().zip(&quotas) {
        let picks = index::sample(stream.rng(), members.len(), quota);
        chosen.extend(picks.iter().map(|j| members[j]));
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| profiles[i].clone()).collect())
}
