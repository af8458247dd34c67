mod common;

use common::oracle::*;
use faas_sim::engine::EventKind;
use faas_sim::policy::PolicyConfig;

#[test]
fn sync_keepalive_matches_oracle() {
    let out = simulate(sync_policy());
    assert_eq!(timeline(&out), expected_sync_timeline());
    assert_eq!(
        dispatch_and_completion(&out),
        vec![
            (1005, 1505),
            (1205, 1505),
            (2005, 2105),
            (2005, 2405),
            (3505, 4505),
            (3005, 3205),
            (3605, 3705),
            (5005, 5105),
            (41005, 41105),
            (71005, 71105),
        ]
    );
    assert_eq!(
        spans(&out),
        vec![
            (0, 0, Some(1000), Some(31505)),
            (0, 200, Some(1200), Some(33705)),
            (1, 1000, Some(2000), Some(33205)),
            (2, 2500, Some(3500), Some(35105)),
            (1, 40000, Some(41000), Some(71105)),
            (0, 70000, Some(71000), Some(101105)),
        ]
    );
    let cold: Vec<bool> = out.records.iter().map(|r| r.cold).collect();
    assert_eq!(cold, [true, true, true, false, true, false, false, false, true, true]);
}

#[test]
fn async_window_matches_oracle() {
    let out = simulate(async_policy());
    assert_eq!(timeline(&out), expected_async_timeline());
    assert_eq!(
        dispatch_and_completion(&out),
        vec![
            (3005, 3505),
            (3005, 3305),
            (3005, 3105),
            (3310, 3710),
            (5005, 6005),
            (3110, 3310),
            (3605, 3705),
            (6010, 6110),
            (43005, 43105),
            (73005, 73105),
        ]
    );
    assert_eq!(
        spans(&out),
        vec![
            (0, 2000, Some(3000), Some(6000)),
            (0, 2000, Some(3000), Some(10000)),
            (1, 2000, Some(3000), Some(14000)),
            (0, 4000, Some(5000), Some(14000)),
            (2, 4000, Some(5000), Some(18000)),
            (1, 42000, Some(43000), Some(54000)),
            (0, 72000, Some(73000), Some(84000)),
        ]
    );
    let cold: Vec<bool> = out.records.iter().map(|r| r.cold).collect();
    assert_eq!(cold, [true, true, true, true, true, true, false, true, true, true]);

    // Periodic events: one concurrency sample per second and one
    // evaluation every two seconds until the end mark.
    let log = out.event_log.as_ref().unwrap();
    let count = |k: EventKind| log.iter().filter(|e| e.kind == k).count();
    assert_eq!(count(EventKind::ConcurrencySample), 120);
    assert_eq!(count(EventKind::ScaleEvaluation), 60);
}

#[test]
fn sample_and_evaluation_order_at_shared_timestamps() {
    let policy = PolicyConfig::async_window(10_000, 1.0, 1);
    let out = simulate(policy);
    let log = out.event_log.unwrap();
    for pair in log.windows(2) {
        if pair[1].kind == EventKind::ScaleEvaluation {
            let sample = log
                .iter()
                .rev()
                .find(|e| e.kind == EventKind::ConcurrencySample && e.time_ms == pair[1].time_ms);
            assert!(sample.is_some_and(|s| s.seq < pair[1].seq));
        }
    }
}
