mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use pdttagger::runtime::{Diagnostic, RegionProfile, RunResult, Runtime, RuntimeConfig, SimClock, ThreadPlan};
use pdttagger::scan::RegionId;
use proptest::prelude::*;

use common::traces::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn random_nested_traces_aggregate_exactly(
        programs in prop::collection::vec(prop::collection::vec(visit(4), 0..40), 1..=8),
        overrides in prop::collection::vec((0u32..6, 1u32..130), 0..4),
    ) {
        check_trace(&programs, plan_with_overrides(&overrides));
    }
}

#[test]
fn ten_thousand_visits_on_eight_threads() {
    // Each tree: 1 + 2 + 4 + 8 visits over four nesting levels = 15 visits.
    fn full(depth: u32, region: RegionId) -> Visit {
        Visit {
            region,
            children: if depth == 1 {
                vec![]
            } else {
                vec![full(depth - 1, region + 1), full(depth - 1, region + 1)]
            },
        }
    }
    let trees_per_thread = 10_000 / 15 / 8 + 1;
    let mut programs: Vec<Vec<Visit>> = (0..8).map(|_| vec![full(4, 0); trees_per_thread]).collect();
    // Trim with single-visit trees to land exactly on 10^4.
    let mut total = 8 * trees_per_thread * 15;
    while total > 10_000 {
        let t = total % 8;
        programs[t].pop();
        total -= 15;
    }
    let mut i = 0;
    while total < 10_000 {
        programs[i % 8].push(Visit {
            region: 5,
            children: vec![],
        });
        total += 1;
        i += 1;
    }
    check_trace(&programs, plan_with_overrides(&[(1, 64), (3, 128)]));
}

#[test]
fn four_threads_twenty_five_visits_each() {
    let rt = Runtime::new(RuntimeConfig::new(ThreadPlan::uniform(8)));
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| {
                for _ in 0..25 {
                    let t = rt.region_begin(7);
                    rt.region_end(t).unwrap();
                }
            });
        }
    });
    let r = rt.snapshot();
    assert_eq!(r.profiles.len(), 1);
    assert_eq!(r.profiles[0].visits, 100);
}

/// One step of a possibly unbalanced single-thread trace.
#[derive(Debug, Clone)]
enum Op {
    Begin(RegionId),
    EndId(RegionId),
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    /// Id-based ends against a plain stack model: matching closes the
    /// innermost open visit of that id and abandons visits above it.
    #[test]
    fn unbalanced_traces_match_stack_model(ops in prop::collection::vec(
        prop_oneof![(0u32..4).prop_map(Op::Begin), (0u32..4).prop_map(Op::EndId)], 0..60)
    ) {
        let clock = Arc::new(SimClock::default());
        let mut cfg = RuntimeConfig::new(ThreadPlan::uniform(2));
        cfg.clock = clock.clone();
        let rt = Runtime::new(cfg);

        let mut stack: Vec<RegionId> = Vec::new();
        let (mut begins, mut ends, mut abandoned, mut unmatched) = (0u64, 0u64, 0u64, 0usize);
        let mut closed: BTreeMap<RegionId, u64> = BTreeMap::new();
        for op in &ops {
            clock.advance(1000);
            match *op {
                Op::Begin(r) => {
                    rt.region_begin(r);
                    stack.push(r);
                    begins += 1;
                }
                Op::EndId(r) => {
                    let got = rt.region_end_id(r);
                    match stack.iter().rposition(|&x| x == r) {
                        Some(pos) => {
                            abandoned += (stack.len() - pos - 1) as u64;
                            stack.truncate(pos);
                            ends += 1;
                            *closed.entry(r).or_default() += 1;
                            prop_assert_eq!(got.map(|g| g.region_id), Some(r));
                        }
                        None => {
                            unmatched += 1;
                            prop_assert!(got.is_none());
                        }
                    }
                }
            }
            prop_assert_eq!(rt.open_on_this_thread(), stack.clone());
        }
        let b = rt.balance();
        prop_assert_eq!((b.begins, b.ends, b.abandoned, b.open), (begins, ends, abandoned, stack.len() as u64));
        prop_assert_eq!(b.begins, b.ends + b.abandoned + b.open);
        let diag_unmatched = rt.diagnostics().iter().filter(|d| matches!(d, Diagnostic::UnmatchedEnd(_))).count();
        prop_assert_eq!(diag_unmatched, unmatched);
        let result = rt.snapshot();
        for (r, n) in &closed {
            prop_assert_eq!(result.profile(*r, 2).map(|p| p.visits), Some(*n));
        }
    }
}

fn profile() -> impl Strategy<Value = RegionProfile> {
    (
        0u32..50,
        1u32..256,
        1u64..1000,
        prop::collection::vec(0u64..10_000_000, 3),
        prop::collection::btree_map("[a-z][a-z0-9_]{0,10}", any::<u64>(), 0..4),
    )
        .prop_map(|(region_id, thread_count, visits, mut t, counter_totals)| {
            t.sort();
            // Times quantized to microseconds, the file's resolution.
            RegionProfile {
                region_id,
                thread_count,
                visits,
                min_time_ns: t[0] * 1000,
                max_time_ns: t[1] * 1000,
                total_time_ns: t[2] * 1000 * visits,
                counter_totals,
            }
        })
}

proptest! {
    #[test]
    fn result_file_round_trip(
        run in "[A-Za-z0-9_.-]{1,20}",
        default_threads in 1u32..512,
        profiles in prop::collection::vec(profile(), 0..12),
        unbalanced in prop::collection::btree_set(0u32..100, 0..4),
    ) {
        let mut by_key = BTreeMap::new();
        for p in profiles {
            by_key.insert((p.region_id, p.thread_count), p);
        }
        let r = RunResult {
            run_id: run,
            default_threads,
            profiles: by_key.into_values().collect(),
            unbalanced_regions: unbalanced.into_iter().collect(),
        };
        let text = r.emit();
        let back = RunResult::parse(&text).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(back.emit(), text);
    }

    /// Arbitrary nanosecond times: the file is a fixed point after one trip.
    #[test]
    fn emitted_text_is_a_fixed_point(total in 0u64..u64::MAX / 4, visits in 1u64..100) {
        let p = RegionProfile {
            region_id: 1,
            thread_count: 2,
            visits,
            total_time_ns: total,
            min_time_ns: total / visits,
            max_time_ns: total / visits,
            counter_totals: Default::default(),
        };
        let text = RunResult { run_id: "x".into(), default_threads: 1, profiles: vec![p], unbalanced_regions: vec![] }.emit();
        prop_assert_eq!(RunResult::parse(&text).unwrap().emit(), text);
    }
}

#[test]
fn empty_run_has_header_only() {
    let mut cfg = RuntimeConfig::new(ThreadPlan::uniform(3));
    cfg.run_id = Some("empty".into());
    let text = Runtime::new(cfg).snapshot().emit();
    assert_eq!(text, "pdtresult v1 empty 3\n");
}
