//! Reference data and independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod cgen;
pub mod strategies;
pub mod traces;

use std::path::{Path, PathBuf};

use pdttagger::advisor::{LabeledSample, SmtClass};

pub const CORES: u32 = 32;

/// Published BOTS timings in seconds at 1, 32, 64 and 128 threads, with the
/// fastest of 32/64/128.
pub const BOTS_TIMINGS: [(&str, [f64; 4], u32); 5] = [
    ("Strassen", [101.05, 5.11, 4.43, 5.88], 64),
    ("N Queens", [27.8, 1.16, 0.83, 0.79], 128),
    ("SparseLU", [129.19, 4.79, 4.18, 5.03], 64),
    ("Health", [96.54, 3.97, 3.7, 4.8], 64),
    ("Floorplan", [12.22, 0.55, 0.58, 0.79], 32),
];
pub const BOTS_THREADS: [u32; 4] = [1, 32, 64, 128];

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(rel: &str) -> PathBuf {
    crate_dir().join("tests/fixtures").join(rel)
}

/// Fixture sources as given on the command line, relative to the crate.
pub fn fixture_sources() -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(fixture("src"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".c"))
        .map(|n| format!("tests/fixtures/src/{n}"))
        .collect();
    v.sort();
    v
}

pub fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Runs the CLI in-process. Test binaries start in the crate directory, so
/// relative fixture paths resolve.
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut o = Vec::new();
    let mut e = Vec::new();
    let code = pdttagger::cli::run_cli(std::iter::once("pdttagger").chain(args.iter().copied()), &mut o, &mut e);
    (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
}

/// Index of the minimum, scanning left to right and keeping the first on ties.
pub fn first_argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Gini impurity computed from raw labels.
pub fn gini_of(labels: &[(SmtClass, f64)]) -> f64 {
    let total: f64 = labels.iter().map(|l| l.1).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut sum_sq = 0.0;
    for class in SmtClass::ALL {
        let w: f64 = labels.iter().filter(|l| l.0 == class).map(|l| l.1).sum();
        sum_sq += (w / total) * (w / total);
    }
    1.0 - sum_sq
}

/// Exhaustive search over every feature and every midpoint between
/// distinct values. Returns the minimum weighted impurity, or `None` when
/// no split exists.
pub fn brute_force_best_impurity(samples: &[LabeledSample], n_features: usize) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..n_features {
        let mut vals: Vec<f64> = samples.iter().map(|s| s.values[f]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let left: Vec<(SmtClass, f64)> = samples
                .iter()
                .filter(|s| s.values[f] <= t)
                .map(|s| (s.label, s.weight))
                .collect();
            let right: Vec<(SmtClass, f64)> = samples
                .iter()
                .filter(|s| s.values[f] > t)
                .map(|s| (s.label, s.weight))
                .collect();
            let wl: f64 = left.iter().map(|l| l.1).sum();
            let wr: f64 = right.iter().map(|l| l.1).sum();
            let imp = (wl * gini_of(&left) + wr * gini_of(&right)) / (wl + wr);
            best = Some(best.map_or(imp, |b: f64| b.min(imp)));
        }
    }
    best
}
