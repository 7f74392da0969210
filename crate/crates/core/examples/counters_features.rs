//! Attaches a synthetic counter source to the runtime and derives the
//! advisor's features from each region's totals.

use std::collections::HashMap;
use std::sync::Arc;

use pdttagger::counters::{derive_features, FeatureVector, RegionRates, SyntheticCounterModel, SyntheticProvider};
use pdttagger::runtime::{Runtime, RuntimeConfig, SimClock, ThreadPlan};

fn main() {
    let mut compute = RegionRates::new(2_000_000, 3_000_000);
    compute.branch_misses_per_visit = 4_000;
    let mut memory = RegionRates::new(2_000_000, 900_000);
    memory.l2_misses_per_visit = 20_000;
    memory.loads_per_visit = 400_000;
    memory.stores_per_visit = 100_000;
    memory.cycle_growth_per_doubling = 0.1;
    let model = SyntheticCounterModel {
        regions: HashMap::from([(0, compute), (1, memory)]),
        fallback: None,
    };

    let clock = Arc::new(SimClock::default());
    let mut cfg = RuntimeConfig::new(ThreadPlan::uniform(16));
    cfg.clock = clock.clone();
    cfg.provider = Some(Arc::new(SyntheticProvider::new(model)));
    let rt = Runtime::new(cfg);
    for _ in 0..5 {
        for id in [0, 1] {
            let t = rt.region_begin(id);
            clock.advance(750_000);
            rt.region_end(t);
        }
    }

    println!("{:<8}{}", "region", FeatureVector::NAMES.join("  "));
    for p in rt.snapshot().profiles {
        let d = derive_features(&p.counter_totals, p.visits, p.total_time_ns as f64 / 1e9).unwrap();
        let row: Vec<String> = d.features.to_array().iter().map(|v| format!("{v:.4}")).collect();
        println!("{:<8}{}", p.region_id, row.join("  "));
        if d.has_missing() {
            println!("        (zeroed: {:?})", d.missing);
        }
    }
}
