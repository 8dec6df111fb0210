//! Trace replay against a [`PolicyState`] with a dirty-block model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::policy::{AccessOutcome, Destination, PolicyConfig, PolicyKind, PolicyState, QueueId};
use crate::trace::{Trace, TraceRequest};
use crate::BlockId;

/// Cache sizes used when none are given: fractions of the trace footprint.
pub const DEFAULT_SIZE_FRACS: [f64; 4] = [0.005, 0.01, 0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirtyModel {
    /// When false, writes are replayed as reads.
    pub enabled: bool,
    /// Dirty blocks older than this many seconds are flushed.
    pub flush_age_sec: u64,
    pub low_watermark: f64,
    pub high_watermark: f64,
}

impl Default for DirtyModel {
    fn default() -> Self {
        DirtyModel {
            enabled: false,
            flush_age_sec: 30,
            low_watermark: 0.10,
            high_watermark: 0.20,
        }
    }
}

impl DirtyModel {
    pub fn enabled() -> Self {
        DirtyModel {
            enabled: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let (lo, hi) = (self.low_watermark, self.high_watermark);
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(SimError::Config(crate::error::ConfigError::InvalidField {
                field: "watermarks",
                reason: format!("need 0 <= low ({lo}) <= high ({hi}) <= 1"),
            }));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CacheSize {
    /// Fraction of the trace footprint, rounded half up.
    Fraction(f64),
    Blocks(usize),
}

impl CacheSize {
    pub fn resolve(self, footprint: u64) -> Result<usize, SimError> {
        let blocks = match self {
            CacheSize::Fraction(f) => crate::policy::round_half_up(f * footprint as f64),
            CacheSize::Blocks(b) => b,
        };
        if blocks < 2 {
            return Err(SimError::CacheTooSmall { blocks });
        }
        Ok(blocks)
    }

    pub fn fraction(self) -> Option<f64> {
        match self {
            CacheSize::Fraction(f) => Some(f),
            CacheSize::Blocks(_) => None,
        }
    }
}

/// Per-run changes to a policy's default configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigOverrides {
    pub small_frac: Option<f64>,
    pub ghost_frac: Option<f64>,
    pub window_frac: Option<f64>,
    pub reinsertion_limit: Option<u32>,
    pub dirty_scan_cap: Option<usize>,
    pub dirty_promote: Option<bool>,
}

impl ConfigOverrides {
    pub fn apply(&self, kind: PolicyKind, total_blocks: usize) -> PolicyConfig {
        let mut c = PolicyConfig::for_kind(kind, total_blocks);
        if kind.is_three_queue() {
            if let Some(v) = self.small_frac {
                c.small_frac = v;
            }
            if let Some(v) = self.ghost_frac {
                c.ghost_frac = v;
            }
            if let Some(v) = self.window_frac {
                c.window_frac = v;
            }
        }
        if self.reinsertion_limit.is_some() {
            c.reinsertion_limit = self.reinsertion_limit;
        }
        if self.dirty_scan_cap.is_some() {
            c.dirty_scan_cap = self.dirty_scan_cap;
        }
        if let Some(v) = self.dirty_promote {
            c.dirty_promote = v;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlushReason {
    Age,
    Watermark,
    /// Every Main entry was dirty and a block could not be admitted.
    Forced,
}

/// Hooks for analyses that need more than aggregate counters.
pub trait SimObserver {
    fn on_access(&mut self, _index: usize, _request: &TraceRequest, _outcome: &AccessOutcome) {}
    fn on_flush(&mut self, _index: usize, _key: BlockId, _reason: FlushReason) {}
}

impl SimObserver for () {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: String,
    pub total_blocks: usize,
    pub size_frac: Option<f64>,
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_ratio: f64,
    pub writes: u64,
    pub ghost_hits: u64,
    pub flow_small_to_main: u64,
    pub flow_small_to_ghost: u64,
    pub flow_ghost_to_main: u64,
    /// Promotable Small FIFO evictees dropped because the Main queue was entirely dirty.
    pub small_discards: u64,
    pub giveups: u64,
    /// Small FIFO eviction scans started; each ends in exactly one promotion, ghost
    /// insertion, discard or give-up.
    pub small_evictions: u64,
    pub main_evictions: u64,
    /// Blocks that could not be cached because every Main entry was dirty.
    pub bypasses: u64,
    /// Main evictions keyed by the number of ref-set entries the hand skipped.
    pub skipped_ref_histogram: BTreeMap<u32, u64>,
    pub skipped_ref_max: u32,
    pub skipped_dirty_small: u64,
    pub skipped_dirty_main: u64,
    pub skipped_dirty_total: u64,
    pub flushes_time: u64,
    pub flushes_watermark: u64,
    pub flushes_forced: u64,
    /// Dirty model was on but the trace has no timestamps, so age-based flushing was off.
    pub time_flush_disabled: bool,
}

impl SimResult {
    pub fn skipped_ref_mean(&self) -> f64 {
        let (n, sum) = self
            .skipped_ref_histogram
            .iter()
            .fold((0u64, 0u64), |(n, s), (&k, &c)| (n + c, s + k as u64 * c));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    pub const CSV_HEADER: &'static str = "policy,size_frac,total_blocks,requests,hits,misses,miss_ratio,\
ghost_hits,s2m,s2g,g2m,small_discards,giveups,small_evictions,main_evictions,bypasses,\
skipped_ref_mean,skipped_ref_max,skipped_dirty_total,flushes_time,flushes_watermark,flushes_forced";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{},{},{},{},{},{},{},{},{},{:.4},{},{},{},{},{}",
            self.policy,
            self.size_frac.map(|f| f.to_string()).unwrap_or_default(),
            self.total_blocks,
            self.requests,
            self.hits,
            self.misses,
            self.miss_ratio,
            self.ghost_hits,
            self.flow_small_to_main,
            self.flow_small_to_ghost,
            self.flow_ghost_to_main,
            self.small_discards,
            self.giveups,
            self.small_evictions,
            self.main_evictions,
            self.bypasses,
            self.skipped_ref_mean(),
            self.skipped_ref_max,
            self.skipped_dirty_total,
            self.flushes_time,
            self.flushes_watermark,
            self.flushes_forced,
        )
    }

    /// Single line of `key=value` pairs.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in Self::CSV_HEADER.split(',').zip(self.csv_row().split(',')) {
            if !s.is_empty() {
                s.push(' ');
            }
            let _ = write!(s, "{k}={v}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Dirty blocks ordered by (dirtied-at time, sequence).
#[derive(Default)]
struct DirtySet {
    order: BTreeSet<(u64, u64, BlockId)>,
    since: FxHashMap<BlockId, (u64, u64)>,
    seq: u64,
}

impl DirtySet {
    fn mark(&mut self, key: BlockId, time: u64) {
        if let std::collections::hash_map::Entry::Vacant(e) = self.since.entry(key) {
            self.seq += 1;
            e.insert((time, self.seq));
            self.order.insert((time, self.seq, key));
        }
    }

    fn len(&self) -> usize {
        self.since.len()
    }

    fn pop_oldest(&mut self) -> Option<(u64, BlockId)> {
        let (t, _, key) = self.order.pop_first()?;
        self.since.remove(&key);
        Some((t, key))
    }

    fn oldest_time(&self) -> Option<u64> {
        self.order.first().map(|&(t, _, _)| t)
    }
}

struct Replay<'a, O: SimObserver> {
    policy: PolicyState,
    dirty_model: DirtyModel,
    dirty: DirtySet,
    result: SimResult,
    observer: &'a mut O,
    time_flush: bool,
}

impl<O: SimObserver> Replay<'_, O> {
    fn flush(&mut self, index: usize, key: BlockId, reason: FlushReason) {
        let was_dirty = self.policy.flush_block(key);
        debug_assert!(was_dirty, "dirty set out of sync for {key}");
        match reason {
            FlushReason::Age => self.result.flushes_time += 1,
            FlushReason::Watermark => self.result.flushes_watermark += 1,
            FlushReason::Forced => self.result.flushes_forced += 1,
        }
        self.observer.on_flush(index, key, reason);
    }

    fn flush_pass(&mut self, index: usize, now: u64) {
        let total = self.result.total_blocks as f64;
        if self.dirty.len() as f64 > self.dirty_model.high_watermark * total {
            while self.dirty.len() as f64 > self.dirty_model.low_watermark * total {
                let (_, key) = self.dirty.pop_oldest().expect("non-empty");
                self.flush(index, key, FlushReason::Watermark);
            }
        }
        if self.time_flush {
            while self
                .dirty
                .oldest_time()
                .is_some_and(|t| now.saturating_sub(t) > self.dirty_model.flush_age_sec)
            {
                let (_, key) = self.dirty.pop_oldest().expect("non-empty");
                self.flush(index, key, FlushReason::Age);
            }
        }
    }

    fn step(&mut self, index: usize, req: &TraceRequest) {
        let write = self.dirty_model.enabled && req.op.is_write();
        if self.dirty_model.enabled {
            self.flush_pass(index, req.time_sec);
        }
        let outcome = self.policy.access(req.lbn, write);
        self.record(&outcome, write);
        if write && outcome.admitted {
            self.dirty.mark(req.lbn, req.time_sec);
        }
        self.observer.on_access(index, req, &outcome);
        if !outcome.admitted {
            while let Some((_, key)) = self.dirty.pop_oldest() {
                self.flush(index, key, FlushReason::Forced);
            }
        }
    }

    fn record(&mut self, outcome: &AccessOutcome, write: bool) {
        let r = &mut self.result;
        r.requests += 1;
        r.writes += write as u64;
        if outcome.is_hit() {
            r.hits += 1;
        } else {
            r.misses += 1;
        }
        if outcome.kind == crate::policy::AccessKind::MissGhostHit {
            r.ghost_hits += 1;
            if outcome.admitted {
                r.flow_ghost_to_main += 1;
            }
        }
        if !outcome.admitted {
            r.bypasses += 1;
        }
        if let Some(g) = outcome.gave_up {
            r.giveups += 1;
            r.small_evictions += 1;
            r.skipped_dirty_small += g.skipped_dirty as u64;
        }
        for ev in &outcome.evictions {
            match ev.source {
                QueueId::Small => {
                    r.small_evictions += 1;
                    r.skipped_dirty_small += ev.skipped_dirty as u64;
                    match ev.destination {
                        Destination::Main => r.flow_small_to_main += 1,
                        Destination::Ghost => r.flow_small_to_ghost += 1,
                        Destination::Discard => r.small_discards += 1,
                    }
                }
                QueueId::Main => {
                    r.main_evictions += 1;
                    r.skipped_dirty_main += ev.skipped_dirty as u64;
                    *r.skipped_ref_histogram.entry(ev.skipped_ref).or_insert(0) += 1;
                    r.skipped_ref_max = r.skipped_ref_max.max(ev.skipped_ref);
                    debug_assert!(!self.dirty.since.contains_key(&ev.key), "evicted dirty {}", ev.key);
                }
            }
        }
    }
}

/// Replay `trace` and report aggregate metrics.
pub fn simulate(
    trace: &Trace,
    kind: PolicyKind,
    overrides: &ConfigOverrides,
    size: CacheSize,
    dirty: &DirtyModel,
) -> Result<SimResult, SimError> {
    simulate_observed(trace, kind, overrides, size, dirty, &mut ())
}

pub fn simulate_observed<O: SimObserver>(
    trace: &Trace,
    kind: PolicyKind,
    overrides: &ConfigOverrides,
    size: CacheSize,
    dirty: &DirtyModel,
    observer: &mut O,
) -> Result<SimResult, SimError> {
    dirty.validate()?;
    let total = size.resolve(trace.meta.footprint)?;
    let policy = PolicyState::new(kind, overrides.apply(kind, total))?;
    let time_flush = dirty.enabled && trace.meta.has_timestamps;
    if dirty.enabled && !trace.meta.has_timestamps {
        log::warn!("trace has no timestamps; age-based flushing disabled");
    }
    let mut replay = Replay {
        policy,
        dirty_model: *dirty,
        dirty: DirtySet::default(),
        result: SimResult {
            policy: kind.name().to_string(),
            total_blocks: total,
            size_frac: size.fraction(),
            time_flush_disabled: dirty.enabled && !trace.meta.has_timestamps,
            ..Default::default()
        },
        observer,
        time_flush,
    };
    for (i, req) in trace.requests.iter().enumerate() {
        replay.step(i, req);
    }
    let mut r = replay.result;
    r.miss_ratio = if r.requests == 0 {
        0.0
    } else {
        r.misses as f64 / r.requests as f64
    };
    r.skipped_dirty_total = r.skipped_dirty_small + r.skipped_dirty_main;
    Ok(r)
}

/// One simulation per size, run in parallel; results keep the order of `sizes`.
pub fn sweep_sizes(
    trace: &Trace,
    kind: PolicyKind,
    overrides: &ConfigOverrides,
    sizes: &[CacheSize],
    dirty: &DirtyModel,
) -> Result<Vec<(CacheSize, SimResult)>, SimError> {
    if sizes.is_empty() {
        return Err(SimError::NoSizes);
    }
    sizes
        .par_iter()
        .map(|&s| simulate(trace, kind, overrides, s, dirty).map(|r| (s, r)))
        .collect()
}

pub fn default_sizes() -> Vec<CacheSize> {
    DEFAULT_SIZE_FRACS.iter().map(|&f| CacheSize::Fraction(f)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirtyModeDelta {
    /// Dirty ref-set blocks stay in the Small FIFO.
    pub skip: SimResult,
    /// Dirty ref-set blocks are promoted to the Main queue.
    pub promote: SimResult,
    /// `(mr_move - mr_skip) / mr_move`, or 0 when `mr_move` is 0.
    pub delta: f64,
    pub abs_diff: f64,
}

/// Compare Clock2Q+ with dirty blocks left in the Small FIFO against promoting them.
pub fn dirty_mode_delta(
    trace: &Trace,
    overrides: &ConfigOverrides,
    size: CacheSize,
    dirty: &DirtyModel,
) -> Result<DirtyModeDelta, SimError> {
    let dirty = DirtyModel {
        enabled: true,
        ..*dirty
    };
    let run = |promote: bool| {
        let o = ConfigOverrides {
            dirty_promote: Some(promote),
            ..overrides.clone()
        };
        simulate(trace, PolicyKind::Clock2QPlus, &o, size, &dirty)
    };
    let (skip, promote) = rayon::join(|| run(false), || run(true));
    let (skip, promote) = (skip?, promote?);
    let (ms, mm) = (skip.miss_ratio, promote.miss_ratio);
    Ok(DirtyModeDelta {
        delta: if mm == 0.0 { 0.0 } else { (mm - ms) / mm },
        abs_diff: (mm - ms).abs(),
        skip,
        promote,
    })
}
