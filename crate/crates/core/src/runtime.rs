//! Measurement runtime behind the region hooks.
//!
//! `begin`/`end` time each region visit (and sample counters when a provider
//! is attached), fold visits into per-(region, thread count) profiles, and
//! `finalize` writes the result file plus the optional XML viz file.
//!
//! Nesting state is per thread; aggregation happens under one mutex. Timing
//! is inclusive: a nested region's time is also counted in its parent.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::ThreadId;
use std::time::Instant;

use thiserror::Error;

use crate::counters::{
    derive_features, CounterError, CounterProvider, Counts, DerivedFeatures, EventSet, Window, WindowContext,
};
use crate::rewrite::RegionManifest;
use crate::scan::RegionId;

/// Bucket for visits to ids the manifest does not know.
pub const UNKNOWN_REGION: RegionId = RegionId::MAX;

pub const ENV_PLAN: &str = "PDTTAGGER_PLAN";
pub const ENV_VIZ: &str = "PDTTAGGER_VIZ_OUTPUT";
pub const ENV_HPM_VIZ: &str = "HPM_VIZ_OUTPUT";
pub const ENV_OUT: &str = "PDTTAGGER_OUT";

pub const RESULT_FILE: &str = "pdttagger.txt";
pub const VIZ_FILE: &str = "pdttagger.viz";

/// Per-region thread counts, fixed for the duration of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadPlan {
    pub default_threads: u32,
    pub overrides: BTreeMap<RegionId, u32>,
}

impl ThreadPlan {
    pub fn uniform(default_threads: u32) -> Self {
        ThreadPlan {
            default_threads: default_threads.max(1),
            overrides: BTreeMap::new(),
        }
    }

    pub fn threads_for(&self, id: RegionId) -> u32 {
        self.overrides.get(&id).copied().unwrap_or(self.default_threads)
    }

    /// `pdtplan v1 <default>` then one `<region_id> <threads>` per override.
    pub fn emit(&self) -> String {
        let mut out = format!("pdtplan v1 {}\n", self.default_threads);
        for (id, n) in &self.overrides {
            let _ = writeln!(out, "{id} {n}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| FormatError::at(1, 0, "empty plan file"))?;
        let default_threads = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["pdtplan", "v1", d] => {
                positive(d).ok_or_else(|| FormatError::at(1, 0, "default thread count must be a positive integer"))?
            }
            _ => return Err(FormatError::at(1, 0, format!("bad plan header `{header}`"))),
        };
        let mut overrides = BTreeMap::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => continue,
                [id, n] => {
                    let id: RegionId = id
                        .parse()
                        .map_err(|_| FormatError::at(i + 1, 0, format!("bad region id `{id}`")))?;
                    let n = positive(n).ok_or_else(|| FormatError::at(i + 1, 0, format!("bad thread count `{n}`")))?;
                    overrides.insert(id, n);
                }
                _ => return Err(FormatError::at(i + 1, 0, "expected `<region_id> <threads>`")),
            }
        }
        Ok(ThreadPlan {
            default_threads,
            overrides,
        })
    }
}

fn positive(s: &str) -> Option<u32> {
    s.parse::<u32>().ok().filter(|&n| n >= 1)
}

/// Syntax error in one of the runtime's text formats. `stanza` is 1-based
/// for result files and 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}{}: {message}", if *.stanza > 0 { format!(" (stanza {})", .stanza) } else { String::new() })]
pub struct FormatError {
    pub line: usize,
    pub stanza: usize,
    pub message: String,
}

impl FormatError {
    fn at(line: usize, stanza: usize, message: impl Into<String>) -> Self {
        FormatError {
            line,
            stanza,
            message: message.into(),
        }
    }
}

pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;
}

/// Monotonic wall clock.
#[derive(Debug)]
pub struct MonotonicClock(Instant);

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

/// Manually advanced clock for simulated runs.
#[derive(Debug, Default)]
pub struct SimClock(AtomicU64);

impl SimClock {
    pub fn advance(&self, ns: u64) {
        self.0.fetch_add(ns, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_ns(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitToken {
    id: u64,
    region: RegionId,
    thread: ThreadId,
}

impl VisitToken {
    pub fn region(&self) -> RegionId {
        self.region
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitRecord {
    pub region_id: RegionId,
    pub thread_count_used: u32,
    pub wall_time_ns: u64,
    pub counters: Counts,
}

/// Recoverable problems observed during a run. None of them stop measuring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    UnknownRegion(RegionId),
    /// `end` for a region with no matching open visit on this thread.
    UnmatchedEnd(RegionId),
    /// A visit abandoned because an enclosing visit ended first, or still
    /// open at finalization.
    Unclosed(RegionId),
    TokenReuse(RegionId),
    CrossThreadEnd(RegionId),
    Counter(CounterError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionProfile {
    pub region_id: RegionId,
    pub thread_count: u32,
    pub visits: u64,
    pub total_time_ns: u64,
    pub min_time_ns: u64,
    pub max_time_ns: u64,
    pub counter_totals: Counts,
}

impl RegionProfile {
    fn first(rec: &VisitRecord) -> Self {
        RegionProfile {
            region_id: rec.region_id,
            thread_count: rec.thread_count_used,
            visits: 1,
            total_time_ns: rec.wall_time_ns,
            min_time_ns: rec.wall_time_ns,
            max_time_ns: rec.wall_time_ns,
            counter_totals: rec.counters.clone(),
        }
    }

    /// Folds one more visit into the aggregate.
    pub fn add(&mut self, rec: &VisitRecord) {
        self.visits += 1;
        self.total_time_ns += rec.wall_time_ns;
        self.min_time_ns = self.min_time_ns.min(rec.wall_time_ns);
        self.max_time_ns = self.max_time_ns.max(rec.wall_time_ns);
        for (k, v) in &rec.counters {
            *self.counter_totals.entry(k.clone()).or_insert(0) += v;
        }
    }

    pub fn mean_time_ns(&self) -> u64 {
        (self.total_time_ns + self.visits / 2)
            .checked_div(self.visits)
            .unwrap_or(0)
    }

    pub fn mean_time_s(&self) -> f64 {
        self.total_time_ns as f64 / self.visits.max(1) as f64 * 1e-9
    }

    pub fn features(&self) -> Result<DerivedFeatures, CounterError> {
        derive_features(&self.counter_totals, self.visits, self.total_time_ns as f64 * 1e-9)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub run_id: String,
    pub default_threads: u32,
    /// Sorted by (region, thread count); each pair appears once.
    pub profiles: Vec<RegionProfile>,
    pub unbalanced_regions: Vec<RegionId>,
}

impl RunResult {
    pub fn profile(&self, region: RegionId, threads: u32) -> Option<&RegionProfile> {
        self.profiles
            .iter()
            .find(|p| p.region_id == region && p.thread_count == threads)
    }

    pub fn emit(&self) -> String {
        let mut out = format!("pdtresult v1 {} {}\n", self.run_id, self.default_threads);
        if !self.unbalanced_regions.is_empty() {
            out.push_str("unbalanced");
            for id in &self.unbalanced_regions {
                let _ = write!(out, " {id}");
            }
            out.push('\n');
        }
        for p in &self.profiles {
            emit_stanza(&mut out, p);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut lines = text.lines().enumerate().peekable();
        let (_, header) = lines.next().ok_or_else(|| FormatError::at(1, 0, "empty result file"))?;
        let (run_id, default_threads) = match header.split(' ').collect::<Vec<_>>().as_slice() {
            ["pdtresult", "v1", run, d] if !run.is_empty() => (
                run.to_string(),
                positive(d).ok_or_else(|| FormatError::at(1, 0, format!("bad default thread count `{d}`")))?,
            ),
            _ => return Err(FormatError::at(1, 0, format!("bad result header `{header}`"))),
        };
        let mut unbalanced_regions = Vec::new();
        if let Some((i, line)) = lines.peek().copied() {
            if let Some(rest) = line.strip_prefix("unbalanced") {
                for tok in rest.split_whitespace() {
                    unbalanced_regions.push(
                        tok.parse()
                            .map_err(|_| FormatError::at(i + 1, 0, format!("bad region id `{tok}`")))?,
                    );
                }
                lines.next();
            }
        }
        let mut profiles = parse_stanzas(&mut lines, |_| false)?;
        profiles.sort_by_key(|p| (p.region_id, p.thread_count));
        if profiles
            .windows(2)
            .any(|w| (w[0].region_id, w[0].thread_count) == (w[1].region_id, w[1].thread_count))
        {
            return Err(FormatError::at(0, 0, "duplicate (region, threads) stanza"));
        }
        Ok(RunResult {
            run_id,
            default_threads,
            profiles,
            unbalanced_regions,
        })
    }

    /// XML companion document. Counter elements are included only when
    /// `with_counters` is set.
    pub fn emit_viz(&self, manifest: Option<&RegionManifest>, with_counters: bool) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            out,
            "<pdtviz version=\"1\" run=\"{}\" default_threads=\"{}\">",
            xml_escape(&self.run_id),
            self.default_threads
        );
        for p in &self.profiles {
            let entry = manifest.and_then(|m| m.get(p.region_id));
            let (kind, file, line) = entry
                .map(|e| (e.kind.as_str(), e.file.as_str(), e.pragma_line))
                .unwrap_or(("unknown", "", 0));
            let _ = writeln!(
                out,
                "  <region id=\"{}\" kind=\"{}\" file=\"{}\" line=\"{}\" threads=\"{}\">",
                p.region_id,
                kind,
                xml_escape(file),
                line,
                p.thread_count
            );
            let _ = writeln!(
                out,
                "    <time visits=\"{}\" total=\"{}\" mean=\"{}\" min=\"{}\" max=\"{}\"/>",
                p.visits,
                seconds(p.total_time_ns),
                seconds(p.mean_time_ns()),
                seconds(p.min_time_ns),
                seconds(p.max_time_ns)
            );
            if with_counters {
                for (name, value) in &p.counter_totals {
                    let _ = writeln!(out, "    <counter name=\"{}\" value=\"{value}\"/>", xml_escape(name));
                }
            }
            out.push_str("  </region>\n");
        }
        out.push_str("</pdtviz>\n");
        out
    }
}

pub(crate) fn emit_stanza(out: &mut String, p: &RegionProfile) {
    // Mean from the rounded total, so re-emitting a parsed file is exact.
    let total_us = (p.total_time_ns + 500) / 1000;
    let mean_ns = (total_us + p.visits / 2) / p.visits.max(1) * 1000;
    let _ = writeln!(
        out,
        "region {} threads {} visits {} total {} mean {} min {} max {}",
        p.region_id,
        p.thread_count,
        p.visits,
        seconds(p.total_time_ns),
        seconds(mean_ns),
        seconds(p.min_time_ns),
        seconds(p.max_time_ns)
    );
    for (name, count) in &p.counter_totals {
        let _ = writeln!(out, "  counter {name} {count}");
    }
}

/// Parses `region ...` stanzas until `stop` accepts a line (which is left
/// unconsumed) or input ends.
pub(crate) fn parse_stanzas<'a, I>(
    lines: &mut std::iter::Peekable<I>,
    stop: impl Fn(&str) -> bool,
) -> Result<Vec<RegionProfile>, FormatError>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let mut profiles: Vec<RegionProfile> = Vec::new();
    while let Some((i, line)) = lines.peek().copied() {
        if stop(line) {
            break;
        }
        lines.next();
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("  counter ") {
            let stanza = profiles.len();
            let p = profiles
                .last_mut()
                .ok_or_else(|| FormatError::at(n, 0, "counter line before any region stanza"))?;
            let f: Vec<&str> = rest.split(' ').collect();
            match f.as_slice() {
                [name, count] if !name.is_empty() => {
                    let c: u64 = count
                        .parse()
                        .map_err(|_| FormatError::at(n, stanza, format!("bad counter value `{count}`")))?;
                    if p.counter_totals.insert(name.to_string(), c).is_some() {
                        return Err(FormatError::at(n, stanza, format!("counter `{name}` repeated")));
                    }
                }
                _ => return Err(FormatError::at(n, stanza, "expected `  counter <event> <count>`")),
            }
            continue;
        }
        let stanza = profiles.len() + 1;
        profiles.push(parse_region_line(line).map_err(|m| FormatError::at(n, stanza, m))?);
    }
    Ok(profiles)
}

fn parse_region_line(line: &str) -> Result<RegionProfile, String> {
    let f: Vec<&str> = line.split(' ').collect();
    let keys = ["region", "threads", "visits", "total", "mean", "min", "max"];
    if f.len() != 14 {
        return Err(format!("truncated or malformed region line `{line}`"));
    }
    for (k, key) in keys.iter().enumerate() {
        if f[2 * k] != *key {
            return Err(format!("expected `{key}`, found `{}`", f[2 * k]));
        }
    }
    let int = |s: &str, what: &str| s.parse::<u64>().map_err(|_| format!("bad {what} `{s}`"));
    let secs = |s: &str, what: &str| parse_seconds(s).ok_or_else(|| format!("bad {what} time `{s}`"));
    let visits = int(f[5], "visit count")?;
    if visits == 0 {
        return Err("visits must be at least 1".into());
    }
    let p = RegionProfile {
        region_id: int(f[1], "region id")? as RegionId,
        thread_count: int(f[3], "thread count")? as u32,
        visits,
        total_time_ns: secs(f[7], "total")?,
        min_time_ns: secs(f[11], "min")?,
        max_time_ns: secs(f[13], "max")?,
        counter_totals: Counts::new(),
    };
    secs(f[9], "mean")?;
    if p.min_time_ns > p.max_time_ns {
        return Err("min exceeds max".into());
    }
    Ok(p)
}

/// Nanoseconds as seconds with 6 decimals.
pub fn seconds(ns: u64) -> String {
    let us = (ns + 500) / 1000;
    format!("{}.{:06}", us / 1_000_000, us % 1_000_000)
}

/// Inverse of [`seconds`], at microsecond precision.
pub fn parse_seconds(s: &str) -> Option<u64> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if whole.is_empty()
        || !whole.bytes().all(|b| b.is_ascii_digit())
        || frac.len() > 6
        || !frac.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let mut us: u64 = whole.parse::<u64>().ok()?.checked_mul(1_000_000)?;
    if !frac.is_empty() {
        us += frac.parse::<u64>().ok()? * 10u64.pow(6 - frac.len() as u32);
    }
    us.checked_mul(1000)
}

pub(crate) fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Output-related environment settings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuntimeEnv {
    pub plan_path: Option<PathBuf>,
    /// `PDTTAGGER_VIZ_OUTPUT=TRUE`: write the viz file.
    pub viz_output: bool,
    /// `HPM_VIZ_OUTPUT=yes`: include counters in the viz file.
    pub hpm_viz_output: bool,
    pub out_dir: PathBuf,
}

impl Default for RuntimeEnv {
    fn default() -> Self {
        RuntimeEnv {
            plan_path: None,
            viz_output: false,
            hpm_viz_output: false,
            out_dir: PathBuf::from("."),
        }
    }
}

impl RuntimeEnv {
    pub fn from_vars<K, V, I>(vars: I) -> Self
    where
        K: AsRef<str>,
        V: AsRef<str>,
        I: IntoIterator<Item = (K, V)>,
    {
        let mut env = RuntimeEnv::default();
        for (k, v) in vars {
            let v = v.as_ref();
            match k.as_ref() {
                ENV_PLAN if !v.is_empty() => env.plan_path = Some(PathBuf::from(v)),
                ENV_VIZ => env.viz_output = v == "TRUE",
                ENV_HPM_VIZ => env.hpm_viz_output = v == "yes",
                ENV_OUT if !v.is_empty() => env.out_dir = PathBuf::from(v),
                _ => {}
            }
        }
        env
    }

    pub fn from_process() -> Self {
        Self::from_vars(std::env::vars())
    }
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Plan { path: PathBuf, source: FormatError },
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), RuntimeError> {
    let io = |source| RuntimeError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Renders the files `finalize` writes, as (file name, contents).
pub fn render_outputs(
    result: &RunResult,
    manifest: Option<&RegionManifest>,
    counters_active: bool,
    env: &RuntimeEnv,
) -> Vec<(&'static str, String)> {
    let mut files = vec![(RESULT_FILE, result.emit())];
    if env.viz_output {
        files.push((
            VIZ_FILE,
            result.emit_viz(manifest, counters_active && env.hpm_viz_output),
        ));
    }
    files
}

pub struct RuntimeConfig {
    pub manifest: Option<RegionManifest>,
    pub plan: ThreadPlan,
    pub provider: Option<Arc<dyn CounterProvider>>,
    pub events: EventSet,
    pub clock: Arc<dyn Clock>,
    pub run_id: Option<String>,
}

impl RuntimeConfig {
    pub fn new(plan: ThreadPlan) -> Self {
        RuntimeConfig {
            manifest: None,
            plan,
            provider: None,
            events: EventSet::canonical(),
            clock: Arc::new(MonotonicClock::default()),
            run_id: None,
        }
    }

    /// Loads the plan named by `PDTTAGGER_PLAN`, falling back to a uniform
    /// plan of `default_threads`.
    pub fn from_env(env: &RuntimeEnv, default_threads: u32) -> Result<Self, RuntimeError> {
        let plan = match &env.plan_path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| RuntimeError::Io {
                    path: path.clone(),
                    source,
                })?;
                ThreadPlan::parse(&text).map_err(|source| RuntimeError::Plan {
                    path: path.clone(),
                    source,
                })?
            }
            None => ThreadPlan::uniform(default_threads),
        };
        Ok(RuntimeConfig::new(plan))
    }
}

struct OpenVisit {
    token: u64,
    region: RegionId,
    threads: u32,
    start_ns: u64,
    window: Option<Window>,
}

#[derive(Default)]
struct Aggregates {
    profiles: BTreeMap<(RegionId, u32), RegionProfile>,
    begins: BTreeMap<RegionId, u64>,
    ends: BTreeMap<RegionId, u64>,
    visit_index: HashMap<(RegionId, u32), u64>,
    diagnostics: Vec<Diagnostic>,
}

/// Trace-level totals. `begins == ends + abandoned + open` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Balance {
    pub begins: u64,
    pub ends: u64,
    pub abandoned: u64,
    pub open: u64,
}

static NEXT_RUNTIME: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static STACKS: RefCell<HashMap<u64, Vec<OpenVisit>>> = RefCell::new(HashMap::new());
}

pub struct Runtime {
    key: u64,
    run_id: String,
    known: Option<BTreeSet<RegionId>>,
    manifest: Option<RegionManifest>,
    plan: ThreadPlan,
    provider: Option<Arc<dyn CounterProvider>>,
    events: EventSet,
    clock: Arc<dyn Clock>,
    next_token: AtomicU64,
    begins: AtomicU64,
    ends: AtomicU64,
    abandoned: AtomicU64,
    agg: Mutex<Aggregates>,
}

impl Runtime {
    pub fn new(cfg: RuntimeConfig) -> Self {
        let key = NEXT_RUNTIME.fetch_add(1, Ordering::Relaxed);
        let run_id = cfg.run_id.unwrap_or_else(|| {
            let t = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            format!("{t}-{}-{key}", std::process::id())
        });
        Runtime {
            key,
            run_id,
            known: cfg.manifest.as_ref().map(|m| m.entries.iter().map(|e| e.id).collect()),
            manifest: cfg.manifest,
            plan: cfg.plan,
            provider: cfg.provider,
            events: cfg.events,
            clock: cfg.clock,
            next_token: AtomicU64::new(1),
            begins: AtomicU64::new(0),
            ends: AtomicU64::new(0),
            abandoned: AtomicU64::new(0),
            agg: Mutex::new(Aggregates::default()),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn plan(&self) -> &ThreadPlan {
        &self.plan
    }

    /// Thread count for a region's next team. Constant for the whole run.
    pub fn region_threads(&self, id: RegionId) -> u32 {
        self.plan.threads_for(id)
    }

    fn with_stack<R>(&self, f: impl FnOnce(&mut Vec<OpenVisit>) -> R) -> R {
        STACKS.with(|s| {
            let mut map = s.borrow_mut();
            let stack = map.entry(self.key).or_default();
            let r = f(stack);
            if stack.is_empty() {
                map.remove(&self.key);
            }
            r
        })
    }

    pub fn region_begin(&self, id: RegionId) -> VisitToken {
        let mut diags = Vec::new();
        let region = match &self.known {
            Some(known) if !known.contains(&id) => {
                diags.push(Diagnostic::UnknownRegion(id));
                UNKNOWN_REGION
            }
            _ => id,
        };
        let threads = self.region_threads(id);
        let token = self.next_token.fetch_add(1, Ordering::Relaxed);
        let visit_index = {
            let mut agg = self.agg.lock().unwrap();
            *agg.begins.entry(region).or_insert(0) += 1;
            agg.diagnostics.append(&mut diags);
            let idx = agg.visit_index.entry((region, threads)).or_insert(0);
            *idx += 1;
            *idx - 1
        };
        self.begins.fetch_add(1, Ordering::Relaxed);
        let window = self.provider.as_ref().and_then(|p| {
            let ctx = WindowContext {
                region,
                threads,
                visit_index,
            };
            match p.open(&self.events, ctx) {
                Ok(w) => {
                    if !w.omitted.is_empty() {
                        let names: Vec<&str> = w.omitted.iter().map(|e| e.name()).collect();
                        self.diagnose(Diagnostic::Counter(CounterError::UnsupportedEvent(names.join(","))));
                    }
                    Some(w)
                }
                Err(e) => {
                    self.diagnose(Diagnostic::Counter(e));
                    None
                }
            }
        });
        let start_ns = self.clock.now_ns();
        self.with_stack(|s| {
            s.push(OpenVisit {
                token,
                region,
                threads,
                start_ns,
                window,
            })
        });
        VisitToken {
            id: token,
            region,
            thread: std::thread::current().id(),
        }
    }

    fn diagnose(&self, d: Diagnostic) {
        self.agg.lock().unwrap().diagnostics.push(d);
    }

    /// Ends the visit identified by `token`. Visits opened after it on this
    /// thread and still open are abandoned.
    pub fn region_end(&self, token: VisitToken) -> Option<VisitRecord> {
        if token.thread != std::thread::current().id() {
            self.diagnose(Diagnostic::CrossThreadEnd(token.region));
            return None;
        }
        let now = self.clock.now_ns();
        let popped = self.with_stack(|s| {
            let pos = s.iter().rposition(|v| v.token == token.id)?;
            let mut above: Vec<OpenVisit> = s.drain(pos..).collect();
            let target = above.remove(0);
            Some((target, above))
        });
        match popped {
            Some((visit, abandoned)) => {
                self.abandon(abandoned);
                Some(self.close(visit, now))
            }
            None => {
                self.diagnose(Diagnostic::TokenReuse(token.region));
                None
            }
        }
    }

    /// Hook-style end by region id: closes the innermost open visit of `id`
    /// on this thread.
    pub fn region_end_id(&self, id: RegionId) -> Option<VisitRecord> {
        let now = self.clock.now_ns();
        let region = match &self.known {
            Some(known) if !known.contains(&id) => UNKNOWN_REGION,
            _ => id,
        };
        let popped = self.with_stack(|s| {
            let pos = s.iter().rposition(|v| v.region == region)?;
            let mut above: Vec<OpenVisit> = s.drain(pos..).collect();
            let target = above.remove(0);
            Some((target, above))
        });
        match popped {
            Some((visit, abandoned)) => {
                self.abandon(abandoned);
                Some(self.close(visit, now))
            }
            None => {
                self.diagnose(Diagnostic::UnmatchedEnd(id));
                None
            }
        }
    }

    fn abandon(&self, visits: Vec<OpenVisit>) {
        if visits.is_empty() {
            return;
        }
        self.abandoned.fetch_add(visits.len() as u64, Ordering::Relaxed);
        for v in visits {
            if let (Some(p), Some(w)) = (&self.provider, v.window) {
                let _ = p.close(w);
            }
            self.diagnose(Diagnostic::Unclosed(v.region));
        }
    }

    fn close(&self, visit: OpenVisit, now: u64) -> VisitRecord {
        let mut counter_err = None;
        let counters = match (&self.provider, visit.window) {
            (Some(p), Some(w)) => {
                let c = p.read(&w).unwrap_or_else(|e| {
                    counter_err = Some(e);
                    Counts::new()
                });
                if let Err(e) = p.close(w) {
                    counter_err.get_or_insert(e);
                }
                c
            }
            _ => Counts::new(),
        };
        let rec = VisitRecord {
            region_id: visit.region,
            thread_count_used: visit.threads,
            wall_time_ns: now.saturating_sub(visit.start_ns),
            counters,
        };
        self.ends.fetch_add(1, Ordering::Relaxed);
        let mut agg = self.agg.lock().unwrap();
        *agg.ends.entry(rec.region_id).or_insert(0) += 1;
        if let Some(e) = counter_err {
            agg.diagnostics.push(Diagnostic::Counter(e));
        }
        agg.profiles
            .entry((rec.region_id, rec.thread_count_used))
            .and_modify(|p| p.add(&rec))
            .or_insert_with(|| RegionProfile::first(&rec));
        rec
    }

    /// Visits currently open on the calling thread, innermost last.
    pub fn open_on_this_thread(&self) -> Vec<RegionId> {
        STACKS.with(|s| {
            s.borrow()
                .get(&self.key)
                .map(|v| v.iter().map(|o| o.region).collect())
                .unwrap_or_default()
        })
    }

    pub fn balance(&self) -> Balance {
        let begins = self.begins.load(Ordering::SeqCst);
        let ends = self.ends.load(Ordering::SeqCst);
        let abandoned = self.abandoned.load(Ordering::SeqCst);
        Balance {
            begins,
            ends,
            abandoned,
            open: begins - ends - abandoned,
        }
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.agg.lock().unwrap().diagnostics.clone()
    }

    /// Current aggregate state.
    pub fn snapshot(&self) -> RunResult {
        let agg = self.agg.lock().unwrap();
        let mut ids: BTreeSet<RegionId> = agg.begins.keys().copied().collect();
        ids.extend(agg.ends.keys().copied());
        let unbalanced_regions = ids
            .into_iter()
            .filter(|id| agg.begins.get(id) != agg.ends.get(id))
            .collect();
        RunResult {
            run_id: self.run_id.clone(),
            default_threads: self.plan.default_threads,
            profiles: agg.profiles.values().cloned().collect(),
            unbalanced_regions,
        }
    }

    /// Writes the result file (and the viz file when enabled) into
    /// `env.out_dir`. Call once, after all worker threads are done.
    pub fn finalize(&self, env: &RuntimeEnv) -> Result<(RunResult, Vec<PathBuf>), RuntimeError> {
        let open = self.balance().open;
        if open > 0 {
            self.diagnose(Diagnostic::Unclosed(UNKNOWN_REGION));
        }
        let result = self.snapshot();
        let mut written = Vec::new();
        for (name, contents) in render_outputs(&result, self.manifest.as_ref(), self.provider.is_some(), env) {
            let path = env.out_dir.join(name);
            write_atomic(&path, &contents)?;
            written.push(path);
        }
        Ok((result, written))
    }
}
