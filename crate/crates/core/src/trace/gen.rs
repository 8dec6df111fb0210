//! Seeded synthetic workloads.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use super::{Op, TraceRequest};
use crate::error::TraceError;
use crate::BlockId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfSpec {
    pub requests: usize,
    /// Skew; 0 is uniform.
    pub alpha: f64,
    /// Number of distinct blocks; block ids are `0..universe`, id 0 the most popular.
    pub universe: u64,
    pub write_fraction: f64,
    /// Request rate used to stamp `time_sec`; 0 leaves every timestamp at 0.
    pub requests_per_sec: f64,
    pub seed: u64,
}

impl ZipfSpec {
    pub fn new(requests: usize, alpha: f64, universe: u64, seed: u64) -> Self {
        ZipfSpec {
            requests,
            alpha,
            universe,
            write_fraction: 0.0,
            requests_per_sec: 0.0,
            seed,
        }
    }

    pub fn with_write_fraction(mut self, f: f64) -> Self {
        self.write_fraction = f;
        self
    }

    pub fn with_rate(mut self, requests_per_sec: f64) -> Self {
        self.requests_per_sec = requests_per_sec;
        self
    }
}

pub fn generate_zipf(spec: &ZipfSpec) -> Result<Vec<TraceRequest>, TraceError> {
    if spec.universe == 0 {
        return Err(TraceError::Generator("universe must be at least 1".into()));
    }
    if !(spec.alpha >= 0.0 && spec.alpha.is_finite()) {
        return Err(TraceError::Generator(format!("alpha {} must be >= 0", spec.alpha)));
    }
    if !(0.0..=1.0).contains(&spec.write_fraction) {
        return Err(TraceError::Generator(format!(
            "write fraction {} is outside [0, 1]",
            spec.write_fraction
        )));
    }
    if !(spec.requests_per_sec >= 0.0 && spec.requests_per_sec.is_finite()) {
        return Err(TraceError::Generator("request rate must be >= 0".into()));
    }
    let zipf = Zipf::new(spec.universe as f64, spec.alpha)
        .map_err(|e| TraceError::Generator(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.requests)
        .map(|i| {
            let rank = zipf.sample(&mut rng) as u64;
            let write = spec.write_fraction > 0.0 && rng.random_bool(spec.write_fraction);
            TraceRequest {
                time_sec: if spec.requests_per_sec > 0.0 {
                    (i as f64 / spec.requests_per_sec) as u64
                } else {
                    0
                },
                lbn: BlockId(rank.clamp(1, spec.universe) - 1),
                op: if write { Op::Write } else { Op::Read },
                size_bytes: 4096,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedSpec {
    /// Total accesses per selected block, counting the original.
    pub burst_k: usize,
    /// Every injected access lands within this many requests after the original.
    pub burst_span: usize,
    /// Fraction of first occurrences that receive a burst.
    pub fraction: f64,
    pub seed: u64,
}

struct Pending {
    deadline: usize,
    request: TraceRequest,
}

/// Inject correlated references: for a `fraction` of first occurrences, add `burst_k - 1`
/// copies of the request within the next `burst_span` output positions.
///
/// Injected copies inherit the original's op and size and the timestamp of the request
/// they follow. Placement is random but deadline-driven: a base request is only emitted
/// when every outstanding copy can still meet its deadline.
pub fn generate_correlated(base: &[TraceRequest], spec: &CorrelatedSpec) -> Result<Vec<TraceRequest>, TraceError> {
    if spec.burst_k < 2 {
        return Err(TraceError::Generator("burst_k must be at least 2".into()));
    }
    if spec.burst_span < spec.burst_k {
        return Err(TraceError::Generator("burst_span must be at least burst_k".into()));
    }
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(TraceError::Generator(format!("fraction {} is outside [0, 1]", spec.fraction)));
    }
    let extra = spec.burst_k - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = FxHashSet::default();
    let mut out = Vec::with_capacity(base.len() + (base.len() as f64 * spec.fraction) as usize * extra);
    // Deadlines are pushed in non-decreasing order, so FIFO order is earliest-deadline-first.
    let mut pending: VecDeque<Pending> = VecDeque::new();
    let mut next_base = 0usize;
    // Spread copies across the span instead of emitting them back to back.
    let inject_p = 1.0 / (spec.burst_span as f64 / spec.burst_k as f64).max(1.0);

    while next_base < base.len() || !pending.is_empty() {
        let pos = out.len();
        let emit_base = next_base < base.len() && {
            let req = base[next_base];
            let selects = !seen.contains(&req.lbn);
            // Decide selection now so the feasibility check sees the new burst.
            let fits = feasible(&pending, pos, if selects { extra } else { 0 }, pos + spec.burst_span);
            fits && (pending.is_empty() || !rng.random_bool(inject_p))
        };
        if emit_base {
            let req = base[next_base];
            next_base += 1;
            if seen.insert(req.lbn) && spec.fraction > 0.0 && rng.random_bool(spec.fraction) {
                for _ in 0..extra {
                    pending.push_back(Pending {
                        deadline: pos + spec.burst_span,
                        request: req,
                    });
                }
            }
            out.push(req);
        } else {
            let p = pending.pop_front().expect("nothing to emit");
            debug_assert!(pos <= p.deadline);
            let time_sec = out.last().map_or(p.request.time_sec, |r: &TraceRequest| r.time_sec);
            out.push(TraceRequest { time_sec, ..p.request });
        }
    }
    Ok(out)
}

/// Whether all pending copies, plus `added` new ones due by `added_deadline`, can still be
/// placed one per position after a base request emitted at `pos`.
fn feasible(pending: &VecDeque<Pending>, pos: usize, added: usize, added_deadline: usize) -> bool {
    let ok_old = pending.iter().enumerate().all(|(j, p)| pos + 1 + j <= p.deadline);
    ok_old && pos + pending.len() + added <= added_deadline
}
