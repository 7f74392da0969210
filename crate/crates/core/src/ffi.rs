//! C-callable hooks backed by one process-wide [`Runtime`].
//!
//! Instrumented sources call `pdt_region_begin`, `pdt_region_end` and
//! `pdt_region_threads`; linking the static library built from this crate
//! provides them. The runtime is created on the first call from the
//! process environment and writes its output files at exit (or earlier via
//! `pdt_finalize`).

use std::ffi::c_int;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use crate::rewrite::parse_manifest;
use crate::runtime::{Runtime, RuntimeConfig, RuntimeEnv, ThreadPlan};
use crate::scan::RegionId;

/// Optional manifest path; labels the viz output and enables unknown-id checks.
pub const ENV_MANIFEST: &str = "PDTTAGGER_MANIFEST";

struct Global {
    runtime: Runtime,
    env: RuntimeEnv,
}

static GLOBAL: OnceLock<Global> = OnceLock::new();
static FINALIZED: AtomicBool = AtomicBool::new(false);

extern "C" {
    fn atexit(cb: extern "C" fn()) -> c_int;
}

extern "C" fn finalize_at_exit() {
    pdt_finalize();
}

/// First value of `OMP_NUM_THREADS`, else the machine's parallelism.
fn default_threads() -> u32 {
    std::env::var("OMP_NUM_THREADS")
        .ok()
        .and_then(|v| v.split(',').next().and_then(|s| s.trim().parse().ok()))
        .filter(|&n: &u32| n > 0)
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get() as u32))
        .unwrap_or(1)
}

fn global() -> &'static Global {
    GLOBAL.get_or_init(|| {
        let env = RuntimeEnv::from_process();
        let mut cfg = RuntimeConfig::from_env(&env, default_threads()).unwrap_or_else(|e| {
            eprintln!("pdttagger: {e}; using a uniform plan");
            RuntimeConfig::new(ThreadPlan::uniform(default_threads()))
        });
        if let Ok(path) = std::env::var(ENV_MANIFEST) {
            match std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| parse_manifest(&t).map_err(|e| e.to_string()))
            {
                Ok(m) => cfg.manifest = Some(m),
                Err(e) => eprintln!("pdttagger: {path}: {e}; continuing without a manifest"),
            }
        }
        // SAFETY: registers a plain `extern "C"` function with the C runtime.
        unsafe {
            atexit(finalize_at_exit);
        }
        Global {
            runtime: Runtime::new(cfg),
            env,
        }
    })
}

fn region(id: c_int) -> RegionId {
    RegionId::try_from(id).unwrap_or(crate::runtime::UNKNOWN_REGION)
}

#[no_mangle]
pub extern "C" fn pdt_region_begin(id: c_int) {
    global().runtime.region_begin(region(id));
}

#[no_mangle]
pub extern "C" fn pdt_region_end(id: c_int) {
    global().runtime.region_end_id(region(id));
}

/// Thread count for the region's team; always at least 1.
#[no_mangle]
pub extern "C" fn pdt_region_threads(id: c_int) -> c_int {
    c_int::try_from(global().runtime.region_threads(region(id))).unwrap_or(c_int::MAX)
}

/// Writes the output files. Later calls (including the one at exit) do
/// nothing. Returns 0 on success.
#[no_mangle]
pub extern "C" fn pdt_finalize() -> c_int {
    let Some(g) = GLOBAL.get() else { return 0 };
    if FINALIZED.swap(true, Ordering::SeqCst) {
        return 0;
    }
    match g.runtime.finalize(&g.env) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("pdttagger: {e}");
            1
        }
    }
}
