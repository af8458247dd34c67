use std::collections::HashMap;
use std::path::Path;

use faas_sim::trace::{
    gen_synthetic_trace, generate_invocations, log_bucket, parse_trace, sample_functions, write_trace, CountProcess,
    DurationStats, FunctionProfile, SyntheticSpec, TracePaths, ValueDist,
};
use proptest::prelude::*;

fn fixture_paths() -> TracePaths {
    TracePaths::in_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/azure_like"))
}

#[test]
fn golden_fixture_with_extra_columns_parses() {
    let profiles = parse_trace(&fixture_paths()).unwrap();
    let by_id: HashMap<&str, &FunctionProfile> = profiles.iter().map(|p| (p.function_id.as_str(), p)).collect();
    assert_eq!(by_id.len(), 4);

    let http = by_id["f-http"];
    assert_eq!(http.per_minute_counts, vec![3, 0, 2, 5, 1]);
    assert_eq!(http.memory_mb, 170);
    assert_eq!(http.durations.percentiles_ms, [40.0, 45.0, 80.0, 100.0, 140.0, 700.0, 900.0]);
    assert_eq!(http.durations.average_ms, 120.0);

    assert_eq!(by_id["f-timer"].per_minute_counts, vec![1; 5]);
    assert_eq!(by_id["f-queue"].total_invocations(), 0);
    assert_eq!(by_id["f-event"].total_invocations(), 52);
    assert_eq!(by_id["f-event"].memory_mb, 96);
}

#[test]
fn written_trace_reads_back() {
    let spec = SyntheticSpec {
        num_functions: 12,
        minutes: 6,
        rate_per_minute: ValueDist::LogNormal { mean: 4.0, sigma: 1.0 },
        duration_ms: ValueDist::LogNormal { mean: 300.0, sigma: 0.7 },
        memory_mb: ValueDist::LogNormal { mean: 200.0, sigma: 0.5 },
        counts: CountProcess::Poisson,
        timer_fraction: 0.25,
        timer_period_minutes: None,
    };
    let profiles = gen_synthetic_trace(&spec, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = TracePaths::in_dir(dir.path());
    write_trace(&profiles, &paths).unwrap();
    let back = parse_trace(&paths).unwrap();
    assert_eq!(back.len(), profiles.len());
    for (a, b) in profiles.iter().zip(&back) {
        assert_eq!(a.function_id, b.function_id);
        assert_eq!(a.per_minute_counts, b.per_minute_counts);
        assert_eq!(a.memory_mb, b.memory_mb);
        assert_eq!(a.durations.percentiles_ms, b.durations.percentiles_ms);
    }
}

#[test]
fn scale_spec_hits_configured_rate() {
    let spec = SyntheticSpec {
        num_functions: 2000,
        minutes: 80,
        rate_per_minute: ValueDist::LogNormal { mean: 21.875, sigma: 1.5 },
        duration_ms: ValueDist::LogNormal { mean: 60.0, sigma: 0.8 },
        memory_mb: ValueDist::LogNormal { mean: 170.0, sigma: 0.5 },
        counts: CountProcess::Poisson,
        timer_fraction: 0.2,
        timer_period_minutes: None,
    };
    let total: u64 = gen_synthetic_trace(&spec, 42).unwrap().iter().map(|p| p.total_invocations()).sum();
    let expected = spec.aggregate_rate_per_minute() * spec.minutes as f64;
    assert!((total as f64 - expected).abs() / expected < 0.10, "{total} vs {expected}");
}

fn arb_percentiles() -> impl Strategy<Value = [f64; 7]> {
    (1u32..500, prop::collection::vec(0u32..400, 6)).prop_map(|(start, steps)| {
        let mut out = [0.0; 7];
        let mut v = start as f64;
        out[0] = v;
        for (i, s) in steps.iter().enumerate() {
            v += *s as f64;
            out[i + 1] = v;
        }
        out
    })
}

fn arb_profile(id: usize) -> impl Strategy<Value = FunctionProfile> {
    (arb_percentiles(), 64u32..1024, prop::collection::vec(0u32..6, 3)).prop_map(move |(p, mem, counts)| {
        FunctionProfile {
            function_id: format!("fn{id:03}"),
            memory_mb: mem,
            durations: DurationStats::from_percentiles(p),
            per_minute_counts: counts,
        }
    })
}

fn arb_population(max: usize) -> impl Strategy<Value = Vec<FunctionProfile>> {
    (1..=max).prop_flat_map(|n| (0..n).map(arb_profile).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_conserves_counts_per_minute(pop in arb_population(8), seed in any::<u64>()) {
        let plan = generate_invocations(&pop, 3, 1, seed).unwrap();
        let mut seen: HashMap<(u32, u64), u32> = HashMap::new();
        for e in &plan.entries {
            *seen.entry((e.function, e.arrival_ms / 60_000)).or_default() += 1;
        }
        for (fidx, f) in plan.functions.iter().enumerate() {
            let profile = pop.iter().find(|p| p.function_id == f.id).unwrap();
            for (m, &c) in profile.per_minute_counts.iter().enumerate() {
                prop_assert_eq!(seen.get(&(fidx as u32, m as u64)).copied().unwrap_or(0), c);
            }
        }
    }

    #[test]
    fn plan_is_deterministic(pop in arb_population(6), seed in any::<u64>()) {
        let a = generate_invocations(&pop, 3, 1, seed).unwrap();
        let b = generate_invocations(&pop, 3, 1, seed).unwrap();
        prop_assert_eq!(a.checksum(), b.checksum());
        prop_assert_eq!(a.entries, b.entries);
    }

    #[test]
    fn durations_stay_in_support(pop in arb_population(6), seed in any::<u64>()) {
        let plan = generate_invocations(&pop, 3, 1, seed).unwrap();
        for e in &plan.entries {
            let f = &plan.functions[e.function as usize];
            let p = &pop.iter().find(|p| p.function_id == f.id).unwrap().durations;
            prop_assert!(e.duration_ms as f64 >= p.min_ms().floor() && e.duration_ms as f64 <= p.max_ms().ceil());
        }
    }

    #[test]
    fn sampling_respects_bucket_floor_and_ceil(
        totals in prop::collection::vec(1u32..100_000, 1..40),
        frac in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let pop: Vec<FunctionProfile> = totals.iter().enumerate().map(|(i, &t)| FunctionProfile {
            function_id: format!("f{i}"),
            memory_mb: 128,
            durations: DurationStats::constant(10.0),
            per_minute_counts: vec![t],
        }).collect();
        let k = ((pop.len() as f64) * frac).round() as usize;
        let picked = sample_functions(&pop, k, seed).unwrap();
        prop_assert_eq!(picked.len(), k);
        let mut pop_buckets: HashMap<u32, usize> = HashMap::new();
        for p in &pop {
            *pop_buckets.entry(log_bucket(p.total_invocations())).or_default() += 1;
        }
        let mut got: HashMap<u32, usize> = HashMap::new();
        for p in &picked {
            *got.entry(log_bucket(p.total_invocations())).or_default() += 1;
        }
        for (b, n) in pop_buckets {
            let share = k as f64 * n as f64 / pop.len() as f64;
            let g = got.get(&b).copied().unwrap_or(0) as f64;
            prop_assert!(g >= share.floor() && g <= share.ceil(), "bucket {} got {} share {}", b, g, share);
        }
    }
}
