//! Evaluation artifacts: improvement over CLOCK, miss-ratio curves, block-flow tables and
//! next-reuse-distance (NRD) histograms of Small FIFO departures.

use std::fmt::Write as _;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::error::{AnalysisError, SimError};
use crate::policy::{AccessOutcome, Destination, PolicyKind, QueueId};
use crate::sim::{simulate, simulate_observed, CacheSize, ConfigOverrides, DirtyModel, SimObserver, SimResult};
use crate::trace::{Trace, TraceRequest};
use crate::BlockId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Improvement {
    pub mr_clock: f64,
    pub mr_algo: f64,
    pub value: f64,
}

/// Relative miss-ratio reduction over CLOCK: `(mr_clock - mr_algo) / mr_clock`.
pub fn improvement(mr_clock: f64, mr_algo: f64) -> Result<Improvement, AnalysisError> {
    for mr in [mr_clock, mr_algo] {
        if !(0.0..=1.0).contains(&mr) {
            return Err(AnalysisError::InvalidMissRatio(mr));
        }
    }
    if mr_clock == 0.0 {
        return Err(AnalysisError::UndefinedBaseline);
    }
    Ok(Improvement {
        mr_clock,
        mr_algo,
        value: (mr_clock - mr_algo) / mr_clock,
    })
}

/// Marks a request with no later access to the same block.
pub const NEVER: usize = usize::MAX;

/// For each position, the index of the next request to the same block, or [`NEVER`].
pub fn next_access(requests: &[TraceRequest]) -> Vec<usize> {
    let mut next = vec![NEVER; requests.len()];
    let mut seen: FxHashMap<BlockId, usize> = FxHashMap::default();
    for (i, r) in requests.iter().enumerate().rev() {
        if let Some(j) = seen.insert(r.lbn, i) {
            next[i] = j;
        }
    }
    next
}

/// Log2-binned distances: bin `b` holds distances in `[2^b, 2^(b+1))`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NrdHistogram {
    pub bins: Vec<u64>,
    pub never: u64,
}

impl NrdHistogram {
    pub fn record(&mut self, distance: Option<usize>) {
        match distance {
            None => self.never += 1,
            Some(d) => {
                let b = d.max(1).ilog2() as usize;
                if self.bins.len() <= b {
                    self.bins.resize(b + 1, 0);
                }
                self.bins[b] += 1;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum::<u64>() + self.never
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NrdReport {
    pub policy: String,
    pub to_main: NrdHistogram,
    pub to_ghost: NrdHistogram,
    pub result: SimResult,
}

impl NrdReport {
    /// Share of never-reused departures that went to the ghost rather than to Main.
    pub fn never_to_ghost_fraction(&self) -> f64 {
        let total = self.to_main.never + self.to_ghost.never;
        if total == 0 {
            0.0
        } else {
            self.to_ghost.never as f64 / total as f64
        }
    }

    pub const CSV_HEADER: &'static str = "policy,destination,bin_lo,bin_hi,count,pdf";

    /// One row per bin and destination; the never-reused bucket has `bin_lo = never`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (name, h) in [("main", &self.to_main), ("ghost", &self.to_ghost)] {
            let total = h.total().max(1) as f64;
            for (b, &c) in h.bins.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{name},{},{},{c},{:.6}",
                    self.policy,
                    1u64 << b,
                    (1u64 << (b + 1)) - 1,
                    c as f64 / total
                );
            }
            let _ = writeln!(s, "{},{name},never,never,{},{:.6}", self.policy, h.never, h.never as f64 / total);
        }
        s
    }
}

struct NrdObserver<'a> {
    next: &'a [usize],
    last: FxHashMap<BlockId, usize>,
    to_main: NrdHistogram,
    to_ghost: NrdHistogram,
}

impl SimObserver for NrdObserver<'_> {
    fn on_access(&mut self, index: usize, request: &TraceRequest, outcome: &AccessOutcome) {
        for ev in &outcome.evictions {
            if ev.source != QueueId::Small {
                continue;
            }
            let hist = match ev.destination {
                Destination::Main => &mut self.to_main,
                Destination::Ghost => &mut self.to_ghost,
                Destination::Discard => continue,
            };
            // A resident block's most recent access is before this departure, and nothing
            // touched it in between, so its next access is the first one after `index`.
            let last = self.last[&ev.key];
            let next = self.next[last];
            hist.record((next != NEVER).then(|| next - index));
        }
        self.last.insert(request.lbn, index);
    }
}

/// Simulate once and histogram the next-reuse distance of every Small FIFO departure, in
/// requests from the departure to the block's next access.
pub fn nrd_report(
    trace: &Trace,
    kind: PolicyKind,
    overrides: &ConfigOverrides,
    size: CacheSize,
) -> Result<NrdReport, SimError> {
    let next = next_access(&trace.requests);
    let mut obs = NrdObserver {
        next: &next,
        last: FxHashMap::default(),
        to_main: NrdHistogram::default(),
        to_ghost: NrdHistogram::default(),
    };
    let result = simulate_observed(trace, kind, overrides, size, &DirtyModel::default(), &mut obs)?;
    Ok(NrdReport {
        policy: kind.name().to_string(),
        to_main: obs.to_main,
        to_ghost: obs.to_ghost,
        result,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub policy: PolicyKind,
    pub size: CacheSize,
    pub total_blocks: usize,
    pub miss_ratio: f64,
}

fn size_label(size: CacheSize, total_blocks: usize) -> String {
    match size {
        CacheSize::Fraction(f) => f.to_string(),
        CacheSize::Blocks(_) => total_blocks.to_string(),
    }
}

/// Run every (kind, size) cell in parallel. Rows come back grouped by kind in the given
/// order, sizes ascending within each kind.
fn run_cells(
    trace: &Trace,
    kinds: &[PolicyKind],
    sizes: &[CacheSize],
    overrides: &ConfigOverrides,
    dirty: &DirtyModel,
) -> Result<Vec<(PolicyKind, CacheSize, SimResult)>, SimError> {
    if sizes.is_empty() {
        return Err(SimError::NoSizes);
    }
    let mut sizes = sizes.to_vec();
    let footprint = trace.meta.footprint;
    sizes.sort_by_key(|s| s.resolve(footprint).unwrap_or(0));
    let cells: Vec<_> = kinds
        .iter()
        .flat_map(|&k| sizes.iter().map(move |&s| (k, s)))
        .collect();
    cells
        .into_par_iter()
        .map(|(k, s)| simulate(trace, k, overrides, s, dirty).map(|r| (k, s, r)))
        .collect()
}

pub fn miss_ratio_curve(
    trace: &Trace,
    kinds: &[PolicyKind],
    sizes: &[CacheSize],
    overrides: &ConfigOverrides,
    dirty: &DirtyModel,
) -> Result<Vec<CurveRow>, SimError> {
    Ok(run_cells(trace, kinds, sizes, overrides, dirty)?
        .into_iter()
        .map(|(policy, size, r)| CurveRow {
            policy,
            size,
            total_blocks: r.total_blocks,
            miss_ratio: r.miss_ratio,
        })
        .collect())
}

pub const CURVE_CSV_HEADER: &str = "policy,size,total_blocks,miss_ratio";

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = format!("{CURVE_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6}",
            r.policy,
            size_label(r.size, r.total_blocks),
            r.total_blocks,
            r.miss_ratio
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub policy: PolicyKind,
    pub size: CacheSize,
    pub total_blocks: usize,
    pub miss_ratio: f64,
    /// `None` when CLOCK has no misses at this size.
    pub improvement: Option<f64>,
    pub s2m: u64,
    pub s2g: u64,
    pub g2m: u64,
}

/// Every implemented policy at every size, with its improvement over CLOCK and block flows.
pub fn compare_report(
    trace: &Trace,
    sizes: &[CacheSize],
    overrides: &ConfigOverrides,
    dirty: &DirtyModel,
) -> Result<Vec<CompareRow>, SimError> {
    let cells = run_cells(trace, &PolicyKind::ALL, sizes, overrides, dirty)?;
    let clock: Vec<f64> = cells
        .iter()
        .filter(|(k, _, _)| *k == PolicyKind::Clock)
        .map(|(_, _, r)| r.miss_ratio)
        .collect();
    let per_kind = clock.len();
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, (policy, size, r))| CompareRow {
            policy,
            size,
            total_blocks: r.total_blocks,
            miss_ratio: r.miss_ratio,
            improvement: improvement(clock[i % per_kind], r.miss_ratio).ok().map(|x| x.value),
            s2m: r.flow_small_to_main,
            s2g: r.flow_small_to_ghost,
            g2m: r.flow_ghost_to_main,
        })
        .collect())
}

pub const COMPARE_CSV_HEADER: &str = "policy,size_frac,miss_ratio,improvement,s2m,s2g,g2m";

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut s = format!("{COMPARE_CSV_HEADER}\n");
    for r in rows {
        let imp = r.improvement.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:.6},{imp},{},{},{}",
            r.policy,
            size_label(r.size, r.total_blocks),
            r.miss_ratio,
            r.s2m,
            r.s2g,
            r.g2m
        );
    }
    s
}
