//! Drives the hook runtime directly: nested visits from several threads
//! under a per-region thread plan, then the result and viz files.

use std::sync::Arc;

use pdttagger::runtime::{Runtime, RuntimeConfig, SimClock, ThreadPlan};

fn main() {
    let plan = ThreadPlan::parse("pdtplan v1 32\n1 64\n").unwrap();
    let clock = Arc::new(SimClock::default());
    let mut cfg = RuntimeConfig::new(plan);
    cfg.clock = clock.clone();
    cfg.run_id = Some("demo".into());
    let rt = Runtime::new(cfg);

    std::thread::scope(|s| {
        for t in 0..4u64 {
            let (rt, clock) = (&rt, &clock);
            s.spawn(move || {
                for _ in 0..10 {
                    let outer = rt.region_begin(0);
                    let inner = rt.region_begin(1);
                    clock.advance(1_000_000 * (t + 1));
                    rt.region_end(inner);
                    clock.advance(500_000);
                    rt.region_end(outer);
                }
            });
        }
    });

    // Id-based ends tolerate a missing end: the open visit is abandoned.
    rt.region_begin(2);
    rt.region_begin(3);
    rt.region_end_id(2);

    println!("region 1 runs with {} threads", rt.region_threads(1));
    println!("balance: {:?}", rt.balance());
    for d in rt.diagnostics() {
        println!("diagnostic: {d:?}");
    }
    let result = rt.snapshot();
    print!("{}", result.emit());
    print!("{}", result.emit_viz(None, false));
}
