//! Random nested region traces replayed against a runtime.

use std::collections::BTreeMap;

use pdttagger::runtime::{Runtime, RuntimeConfig, ThreadPlan};
use pdttagger::scan::RegionId;
use proptest::prelude::*;

/// A visit and the visits nested inside it.
#[derive(Debug, Clone)]
pub struct Visit {
    pub region: RegionId,
    pub children: Vec<Visit>,
}

pub fn visit(depth: u32) -> BoxedStrategy<Visit> {
    let region = 0u32..6;
    if depth <= 1 {
        region
            .prop_map(|region| Visit {
                region,
                children: vec![],
            })
            .boxed()
    } else {
        (region, prop::collection::vec(visit(depth - 1), 0..3))
            .prop_map(|(region, children)| Visit { region, children })
            .boxed()
    }
}

pub fn count(v: &Visit, into: &mut BTreeMap<RegionId, u64>) {
    *into.entry(v.region).or_default() += 1;
    for c in &v.children {
        count(c, into);
    }
}

/// Replays `v` with token-based ends, checking LIFO order at every step.
/// Returns the records' wall times per region.
pub fn replay(rt: &Runtime, v: &Visit, times: &mut BTreeMap<RegionId, Vec<u64>>) {
    let token = rt.region_begin(v.region);
    assert_eq!(rt.open_on_this_thread().last(), Some(&v.region));
    for c in &v.children {
        replay(rt, c, times);
    }
    assert_eq!(
        rt.open_on_this_thread().last(),
        Some(&v.region),
        "innermost open visit must end first"
    );
    let rec = rt.region_end(token).expect("well-nested end");
    assert_eq!(rec.region_id, v.region);
    assert_eq!(rec.thread_count_used, rt.region_threads(v.region));
    times.entry(v.region).or_default().push(rec.wall_time_ns);
}

pub fn plan_with_overrides(overrides: &[(RegionId, u32)]) -> ThreadPlan {
    ThreadPlan {
        default_threads: 4,
        overrides: overrides.iter().copied().collect(),
    }
}

/// Runs per-thread programs concurrently and checks balance, LIFO and
/// exact aggregation against counts computed from the programs.
pub fn check_trace(programs: &[Vec<Visit>], plan: ThreadPlan) {
    let mut cfg = RuntimeConfig::new(plan);
    cfg.run_id = Some("prop".into());
    let rt = Runtime::new(cfg);
    let per_thread: Vec<BTreeMap<RegionId, Vec<u64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = programs
            .iter()
            .map(|prog| {
                let rt = &rt;
                s.spawn(move || {
                    let mut times = BTreeMap::new();
                    for v in prog {
                        replay(rt, v, &mut times);
                    }
                    assert!(rt.open_on_this_thread().is_empty());
                    times
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut expected = BTreeMap::new();
    for prog in programs {
        for v in prog {
            count(v, &mut expected);
        }
    }
    let total: u64 = expected.values().sum();
    let b = rt.balance();
    assert_eq!((b.begins, b.ends, b.abandoned, b.open), (total, total, 0, 0));
    assert!(rt.diagnostics().is_empty());

    let result = rt.snapshot();
    assert!(result.unbalanced_regions.is_empty());
    let mut times: BTreeMap<RegionId, Vec<u64>> = BTreeMap::new();
    for t in per_thread {
        for (r, v) in t {
            times.entry(r).or_default().extend(v);
        }
    }
    for (region, n) in &expected {
        let p = result
            .profile(*region, rt.region_threads(*region))
            .expect("profile per visited region");
        assert_eq!(p.visits, *n, "region {region}");
        let ts = &times[region];
        assert_eq!(p.total_time_ns, ts.iter().sum::<u64>());
        assert_eq!(p.min_time_ns, *ts.iter().min().unwrap());
        assert_eq!(p.max_time_ns, *ts.iter().max().unwrap());
        assert!(p.min_time_ns <= p.mean_time_ns() && p.mean_time_ns() <= p.max_time_ns);
    }
    assert_eq!(result.profiles.len(), expected.len());
}
