//! Proptest strategies shared by several suites.

use pdttagger::advisor::{Dataset, LabeledSample, SmtClass};
use pdttagger::runtime::{RegionProfile, RunResult};
use proptest::prelude::*;

pub fn class() -> impl Strategy<Value = SmtClass> {
    prop_oneof![Just(SmtClass::Smt1), Just(SmtClass::Smt2), Just(SmtClass::Smt4)]
}

/// Up to 12 samples over 1 to 3 features. Values come from a coarse grid
/// so that duplicates and ties are common.
pub fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..=3).prop_flat_map(|nf| {
        prop::collection::vec((prop::collection::vec(-8i32..8, nf), class()), 1..=12).prop_map(move |rows| {
            Dataset::new(
                (0..nf).map(|i| format!("f{i}")).collect(),
                rows.into_iter()
                    .map(|(v, c)| LabeledSample::new(v.into_iter().map(|x| x as f64 / 4.0).collect(), c))
                    .collect(),
            )
        })
    })
}

/// Runs with arbitrary run ids (XML-special characters included) and
/// counters. Times are whole microseconds, the result file's resolution.
pub fn run_result() -> impl Strategy<Value = RunResult> {
    (
        "[ -~]{1,24}",
        1u32..512,
        prop::collection::btree_map(
            (0u32..30, 1u32..256),
            (
                1u64..100,
                0u64..1_000_000,
                prop::collection::btree_map("[a-z_]{1,12}", any::<u64>(), 0..3),
            ),
            0..10,
        ),
    )
        .prop_map(|(run_id, default_threads, m)| RunResult {
            run_id: run_id.split_whitespace().collect::<Vec<_>>().join("_"),
            default_threads,
            profiles: m
                .into_iter()
                .map(
                    |((region_id, thread_count), (visits, t, counter_totals))| RegionProfile {
                        region_id,
                        thread_count,
                        visits,
                        total_time_ns: t * 1000 * visits,
                        min_time_ns: t * 1000,
                        max_time_ns: t * 1000,
                        counter_totals,
                    },
                )
                .collect(),
            unbalanced_regions: vec![],
        })
        .prop_filter("non-empty run id", |r| !r.run_id.is_empty())
}
