//! Per-region tuning on the published BOTS timings, then the same decision
//! reached by running simulated trials through the runtime.

use std::collections::BTreeMap;

use pdttagger::tuner::{
    build_plan, fit_cost_model, run_trials, speedup, CandidateSet, CostModelParams, ModelExecutor, TrialResult,
};

const NAMES: [&str; 5] = ["Strassen", "N Queens", "SparseLU", "Health", "Floorplan"];
const THREADS: [u32; 4] = [1, 32, 64, 128];
const TIMES: [[f64; 4]; 5] = [
    [101.05, 5.11, 4.43, 5.88],
    [27.8, 1.16, 0.83, 0.79],
    [129.19, 4.79, 4.18, 5.03],
    [96.54, 3.97, 3.7, 4.8],
    [12.22, 0.55, 0.58, 0.79],
];

fn main() {
    // One trial per thread count; each benchmark is one region.
    let trials: Vec<TrialResult> = (1..4)
        .map(|c| TrialResult::from_means(THREADS[c], TIMES.iter().enumerate().map(|(r, row)| (r as u32, row[c]))))
        .collect();
    let outcome = build_plan(&trials).unwrap();
    for d in &outcome.decisions {
        let r = d.region as usize;
        let best = d.times.iter().find(|t| t.0 == d.threads).unwrap().1;
        println!(
            "{:<10} -> {:>3} threads  speedup over 1 thread {:.2}",
            NAMES[r],
            d.threads,
            speedup(TIMES[r][0], best).unwrap()
        );
    }
    println!("default    -> {:>3} threads", outcome.plan.default_threads);
    print!("{}", outcome.plan.emit());

    // Fit every row to the cost model and tune the simulated program.
    let mut regions = BTreeMap::new();
    for (r, row) in TIMES.iter().enumerate() {
        let obs: BTreeMap<u32, f64> = THREADS.into_iter().zip(*row).collect();
        regions.insert(r as u32, fit_cost_model(&obs, 32).unwrap().cost);
    }
    let mut exec = ModelExecutor::new(CostModelParams { cores: 32, regions });
    let report = run_trials(&mut exec, &[], &CandidateSet::smt(32, false).unwrap()).unwrap();
    let simulated = build_plan(&report.trials).unwrap();
    assert_eq!(simulated.plan.overrides, outcome.plan.overrides);
    println!("simulated trials agree with the published table");
}
