//! Fits the SMT cost model to the published BOTS timings (1, 32, 64 and 128
//! threads on a 32-core machine) and prints each fit.
//!
//! `cargo run --example calibrate_cost_model -- strassen` prints only that
//! row's parameter file, ready for `pdttagger tune --model`.

use std::collections::BTreeMap;

use pdttagger::tuner::{fit_cost_model, model_time, CostModelParams};

const CORES: u32 = 32;
const THREADS: [u32; 4] = [1, 32, 64, 128];
const ROWS: [(&str, [f64; 4]); 5] = [
    ("strassen", [101.05, 5.11, 4.43, 5.88]),
    ("nqueens", [27.8, 1.16, 0.83, 0.79]),
    ("sparselu", [129.19, 4.79, 4.18, 5.03]),
    ("health", [96.54, 3.97, 3.7, 4.8]),
    ("floorplan", [12.22, 0.55, 0.58, 0.79]),
];

fn main() {
    let only = std::env::args().nth(1);
    for (name, cells) in ROWS {
        if only.as_deref().is_some_and(|o| o != name) {
            continue;
        }
        let obs: BTreeMap<u32, f64> = THREADS.into_iter().zip(cells).collect();
        let fit = match fit_cost_model(&obs, CORES) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("{name}: {e}");
                continue;
            }
        };
        if only.is_some() {
            let params = CostModelParams {
                cores: CORES,
                regions: BTreeMap::from([(0, fit.cost)]),
            };
            print!("{}", params.emit());
            return;
        }
        let c = fit.cost;
        println!(
            "{name:<10} ts={:.4} W={:.3} o={:.2e} e2={:.4} e4={:.4}  max error {:.2}%",
            c.t_serial,
            c.work_parallel,
            c.overhead_per_thread,
            c.smt2_eff,
            c.smt4_eff,
            100.0 * fit.max_relative_error()
        );
        for (n, t) in THREADS.iter().zip(cells) {
            println!(
                "    {n:>4} threads: measured {t:>7.2}  model {:>7.3}",
                model_time(&c, CORES, *n)
            );
        }
    }
}
