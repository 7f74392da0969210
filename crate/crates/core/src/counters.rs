//! Hardware-event measurement behind a provider interface, and the feature
//! metrics derived from raw counts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::scan::RegionId;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Event {
    Cycles,
    Instructions,
    L2Misses,
    BranchMispredictions,
    Loads,
    Stores,
    /// A platform-specific event name outside the canonical set.
    Other(String),
}

impl Event {
    pub const CANONICAL: [Event; 6] = [
        Event::Cycles,
        Event::Instructions,
        Event::L2Misses,
        Event::BranchMispredictions,
        Event::Loads,
        Event::Stores,
    ];

    pub fn name(&self) -> &str {
        match self {
            Event::Cycles => "cycles",
            Event::Instructions => "instructions",
            Event::L2Misses => "l2_misses",
            Event::BranchMispredictions => "branch_mispredictions",
            Event::Loads => "loads",
            Event::Stores => "stores",
            Event::Other(s) => s,
        }
    }

    pub fn is_canonical(&self) -> bool {
        !matches!(self, Event::Other(_))
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Event {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Event::CANONICAL
            .iter()
            .find(|e| e.name() == s)
            .cloned()
            .unwrap_or_else(|| Event::Other(s.to_string())))
    }
}

/// Event name → count.
pub type Counts = BTreeMap<String, u64>;

/// Ordered, duplicate-free, non-empty list of events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSet(Vec<Event>);

impl EventSet {
    pub fn new(events: Vec<Event>) -> Result<Self, CounterError> {
        if events.is_empty() {
            return Err(CounterError::EmptyEventSet);
        }
        for (i, e) in events.iter().enumerate() {
            if events[..i].contains(e) {
                return Err(CounterError::DuplicateEvent(e.name().to_string()));
            }
        }
        Ok(EventSet(events))
    }

    pub fn canonical() -> Self {
        EventSet(Event::CANONICAL.to_vec())
    }

    pub fn parse_list(list: &str) -> Result<Self, CounterError> {
        EventSet::new(
            list.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().unwrap())
                .collect(),
        )
    }

    pub fn events(&self) -> &[Event] {
        &self.0
    }

    pub fn contains(&self, e: &Event) -> bool {
        self.0.contains(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CounterError {
    #[error("event set is empty")]
    EmptyEventSet,
    #[error("event `{0}` listed twice")]
    DuplicateEvent(String),
    #[error("provider does not support any of the requested events ({0})")]
    UnsupportedEvent(String),
    #[error("window {0} misused: {1}")]
    WindowMisuse(u64, &'static str),
    #[error("profile lacks {0} (need cycles > 0 and instructions > 0)")]
    InsufficientCounters(&'static str),
}

/// What a window is measuring. Synthetic providers derive counts from it;
/// real providers ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowContext {
    pub region: RegionId,
    pub threads: u32,
    pub visit_index: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub id: u64,
    /// Events actually being counted.
    pub events: EventSet,
    /// Requested events the provider could not count.
    pub omitted: Vec<Event>,
    pub context: WindowContext,
}

/// Source of hardware event counts.
///
/// A window is owned by one thread from `open` to `close`. `read` returns
/// counts accumulated since `open`; successive reads never decrease.
pub trait CounterProvider: Send + Sync {
    fn name(&self) -> &str;
    fn open(&self, events: &EventSet, ctx: WindowContext) -> Result<Window, CounterError>;
    fn read(&self, window: &Window) -> Result<Counts, CounterError>;
    fn close(&self, window: Window) -> Result<(), CounterError>;
}

/// Per-region counting rates for [`SyntheticProvider`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRates {
    pub cycles_per_visit: u64,
    pub instr_per_visit: u64,
    pub l2_misses_per_visit: u64,
    pub branch_misses_per_visit: u64,
    pub loads_per_visit: u64,
    pub stores_per_visit: u64,
    /// Cycles grow by this fraction per doubling of the thread count
    /// (contention in shared pipelines).
    pub cycle_growth_per_doubling: f64,
    /// Relative amplitude of deterministic per-visit variation.
    pub jitter: f64,
}

impl RegionRates {
    pub fn new(cycles_per_visit: u64, instr_per_visit: u64) -> Self {
        RegionRates {
            cycles_per_visit,
            instr_per_visit,
            l2_misses_per_visit: 0,
            branch_misses_per_visit: 0,
            loads_per_visit: 0,
            stores_per_visit: 0,
            cycle_growth_per_doubling: 0.0,
            jitter: 0.0,
        }
    }
}

/// Deterministic counts as a function of (region, thread count, visit index).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticCounterModel {
    pub regions: HashMap<RegionId, RegionRates>,
    /// Used for regions without their own entry.
    pub fallback: Option<RegionRates>,
}

impl SyntheticCounterModel {
    pub fn rates(&self, region: RegionId) -> Option<&RegionRates> {
        self.regions.get(&region).or(self.fallback.as_ref())
    }

    /// Counts for one complete visit.
    pub fn visit_counts(&self, ctx: WindowContext) -> BTreeMap<Event, u64> {
        let mut out = BTreeMap::new();
        let Some(r) = self.rates(ctx.region) else {
            return out;
        };
        let noise = if r.jitter == 0.0 {
            1.0
        } else {
            let h = splitmix64((ctx.region as u64) << 40 ^ (ctx.threads as u64) << 20 ^ ctx.visit_index);
            // Uniform in [-1, 1).
            let u = (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
            1.0 + r.jitter * u
        };
        let scale = |base: u64, extra: f64| -> u64 { (base as f64 * extra * noise).round() as u64 };
        let growth = 1.0 + r.cycle_growth_per_doubling * (ctx.threads.max(1) as f64).log2();
        out.insert(Event::Cycles, scale(r.cycles_per_visit, growth));
        out.insert(Event::Instructions, scale(r.instr_per_visit, 1.0));
        out.insert(Event::L2Misses, scale(r.l2_misses_per_visit, 1.0));
        out.insert(Event::BranchMispredictions, scale(r.branch_misses_per_visit, 1.0));
        out.insert(Event::Loads, scale(r.loads_per_visit, 1.0));
        out.insert(Event::Stores, scale(r.stores_per_visit, 1.0));
        out
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Provider backed by a [`SyntheticCounterModel`]; supports the canonical
/// events only.
#[derive(Debug, Default)]
pub struct SyntheticProvider {
    model: SyntheticCounterModel,
    next_id: AtomicU64,
    open: Mutex<HashMap<u64, ()>>,
}

impl SyntheticProvider {
    pub fn new(model: SyntheticCounterModel) -> Self {
        SyntheticProvider {
            model,
            next_id: AtomicU64::new(1),
            open: Mutex::new(HashMap::new()),
        }
    }

    pub fn model(&self) -> &SyntheticCounterModel {
        &self.model
    }
}

impl CounterProvider for SyntheticProvider {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn open(&self, events: &EventSet, ctx: WindowContext) -> Result<Window, CounterError> {
        let (supported, omitted): (Vec<Event>, Vec<Event>) =
            events.events().iter().cloned().partition(Event::is_canonical);
        if supported.is_empty() {
            let names: Vec<&str> = omitted.iter().map(Event::name).collect();
            return Err(CounterError::UnsupportedEvent(names.join(",")));
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.open.lock().unwrap().insert(id, ());
        Ok(Window {
            id,
            events: EventSet(supported),
            omitted,
            context: ctx,
        })
    }

    fn read(&self, window: &Window) -> Result<Counts, CounterError> {
        if !self.open.lock().unwrap().contains_key(&window.id) {
            return Err(CounterError::WindowMisuse(window.id, "read after close"));
        }
        let all = self.model.visit_counts(window.context);
        Ok(window
            .events
            .events()
            .iter()
            .filter_map(|e| all.get(e).map(|&c| (e.name().to_string(), c)))
            .collect())
    }

    fn close(&self, window: Window) -> Result<(), CounterError> {
        match self.open.lock().unwrap().remove(&window.id) {
            Some(()) => Ok(()),
            None => Err(CounterError::WindowMisuse(window.id, "closed twice")),
        }
    }
}

/// Normalized metrics used as advisor input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub ipc: f64,
    pub l2_mpki: f64,
    pub branch_miss_rate: f64,
    pub mem_fraction: f64,
    pub time_per_visit: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; 5] = ["ipc", "l2_mpki", "branch_miss_rate", "mem_fraction", "time_per_visit"];

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.ipc,
            self.l2_mpki,
            self.branch_miss_rate,
            self.mem_fraction,
            self.time_per_visit,
        ]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        FeatureVector {
            ipc: v[0],
            l2_mpki: v[1],
            branch_miss_rate: v[2],
            mem_fraction: v[3],
            time_per_visit: v[4],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|n| *n == name).map(|i| self.to_array()[i])
    }
}

/// Features plus the optional events that were absent and so zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedFeatures {
    pub features: FeatureVector,
    pub missing: Vec<Event>,
}

impl DerivedFeatures {
    pub fn has_missing(&self) -> bool {
        !self.missing.is_empty()
    }
}

/// Computes ratio features from counter totals and timing.
///
/// `visits` and `total_time_s` feed `time_per_visit`.
pub fn derive_features(
    counter_totals: &Counts,
    visits: u64,
    total_time_s: f64,
) -> Result<DerivedFeatures, CounterError> {
    let get = |e: Event| counter_totals.get(e.name()).copied();
    let cycles = get(Event::Cycles).filter(|&c| c > 0);
    let instructions = get(Event::Instructions).filter(|&c| c > 0);
    let (cycles, instructions) = match (cycles, instructions) {
        (Some(c), Some(i)) => (c as f64, i as f64),
        (None, _) => return Err(CounterError::InsufficientCounters("cycles")),
        (_, None) => return Err(CounterError::InsufficientCounters("instructions")),
    };
    let mut missing = Vec::new();
    let mut optional = |e: Event| -> f64 {
        match get(e.clone()) {
            Some(v) => v as f64,
            None => {
                missing.push(e);
                0.0
            }
        }
    };
    let l2 = optional(Event::L2Misses);
    let branch = optional(Event::BranchMispredictions);
    let loads = optional(Event::Loads);
    let stores = optional(Event::Stores);
    let features = FeatureVector {
        ipc: instructions / cycles,
        l2_mpki: 1000.0 * l2 / instructions,
        branch_miss_rate: branch / instructions,
        mem_fraction: (loads + stores) / instructions,
        time_per_visit: if visits == 0 { 0.0 } else { total_time_s / visits as f64 },
    };
    Ok(DerivedFeatures { features, missing })
}
