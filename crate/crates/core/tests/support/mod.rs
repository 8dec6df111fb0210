#![allow(dead_code)]

pub mod reference;

use clock2q::policy::{AccessKind, AccessOutcome, Destination, QueueId};
use clock2q::trace::{generate_correlated, generate_zipf, CorrelatedSpec, Trace, TraceRequest, ZipfSpec};
use clock2q::{PolicyConfig, PolicyKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use reference::{Departure, From, Kind, Params, Served, Step, To};

pub fn policy_kind(k: Kind) -> PolicyKind {
    match k {
        Kind::Lru => PolicyKind::Lru,
        Kind::Fifo => PolicyKind::Fifo,
        Kind::Clock => PolicyKind::Clock,
        Kind::TwoQ => PolicyKind::TwoQ,
        Kind::Clock2Q => PolicyKind::Clock2Q,
        Kind::S3Fifo1 => PolicyKind::S3Fifo1Bit,
        Kind::S3Fifo2 => PolicyKind::S3Fifo2Bit,
        Kind::Clock2QPlus => PolicyKind::Clock2QPlus,
    }
}

pub fn library_config(k: Kind, p: &Params) -> PolicyConfig {
    let mut c = PolicyConfig::for_kind(policy_kind(k), p.total)
        .with_reinsertion_limit(p.ref_skip_limit)
        .with_dirty_promote(p.promote_dirty);
    c.dirty_scan_cap = p.scan_cap;
    c
}

pub fn as_step(o: &AccessOutcome) -> Step {
    let served = match o.kind {
        AccessKind::HitMain => Served::MainHit,
        AccessKind::HitSmallInWindow => Served::SmallHitInWindow,
        AccessKind::HitSmallOutWindow => Served::SmallHitOutWindow,
        AccessKind::MissGhostHit => Served::GhostMiss,
        AccessKind::MissCold => Served::ColdMiss,
    };
    let departures = o
        .evictions
        .iter()
        .map(|e| Departure {
            key: e.key.0,
            from: match e.source {
                QueueId::Small => From::Small,
                QueueId::Main => From::Main,
            },
            to: match e.destination {
                Destination::Main => To::Main,
                Destination::Ghost => To::Ghost,
                Destination::Discard => To::Drop,
            },
            ref_skips: e.skipped_ref,
            dirty_skips: e.skipped_dirty,
        })
        .collect();
    Step {
        served,
        departures,
        gave_up: o.gave_up.map(|g| g.skipped_dirty),
        cached: o.admitted,
    }
}

/// Mixed-popularity random keys: a hot set, a Zipf-like tail and occasional scans.
pub fn random_keys(rng: &mut ChaCha8Rng, n: usize, universe: u64) -> Vec<u64> {
    let hot = (universe / 10).max(1);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        match rng.random_range(0..20) {
            0 => {
                let start = rng.random_range(0..universe);
                let len = rng.random_range(1..=(universe / 4).max(1));
                out.extend((0..len).map(|i| (start + i) % universe).take(n - out.len()));
            }
            1..=9 => out.push(rng.random_range(0..hot)),
            10..=12 => {
                // Back-to-back repeats.
                let k = rng.random_range(0..universe);
                let reps = rng.random_range(1..=4);
                out.extend(std::iter::repeat(k).take(reps.min(n - out.len())));
            }
            _ => {
                let u: f64 = rng.random();
                out.push(((u * u * u) * universe as f64) as u64 % universe);
            }
        }
    }
    out
}

pub fn reads(keys: &[u64]) -> Trace {
    Trace::new(keys.iter().map(|&k| TraceRequest::read(k)).collect())
}

/// Correlated-reference trace: Zipf base with bursts of 3 accesses per selected block.
pub fn correlated_trace(seed: u64, alpha: f64, universe: u64, requests: usize, span: usize, fraction: f64) -> Trace {
    let base = generate_zipf(&ZipfSpec::new(requests, alpha, universe, seed)).unwrap();
    let spec = CorrelatedSpec {
        burst_k: 3,
        burst_span: span,
        fraction,
        seed: seed ^ 0x5eed,
    };
    Trace::new(generate_correlated(&base, &spec).unwrap())
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Event {
    Access { key: u64, write: bool },
    Flush(u64),
}

/// Random workload for the oracle comparison, with writes and interleaved flushes. Most
/// flushes target the oldest outstanding write, the rest a random block.
pub fn random_events(rng: &mut ChaCha8Rng, n: usize, universe: u64, write_frac: f64, flush_p: f64) -> Vec<Event> {
    let keys = random_keys(rng, n, universe);
    let mut written = std::collections::VecDeque::new();
    let mut out = Vec::with_capacity(n + (n as f64 * flush_p) as usize);
    for key in keys {
        let write = write_frac > 0.0 && rng.random_bool(write_frac);
        if write {
            written.push_back(key);
        }
        out.push(Event::Access { key, write });
        if flush_p > 0.0 && rng.random_bool(flush_p) {
            let target = match written.pop_front() {
                Some(k) if rng.random_bool(0.7) => k,
                _ => rng.random_range(0..universe),
            };
            out.push(Event::Flush(target));
        }
    }
    out
}

pub fn footprint(events: &[Event]) -> usize {
    let mut keys: Vec<u64> = events
        .iter()
        .filter_map(|e| match *e {
            Event::Access { key, .. } => Some(key),
            Event::Flush(_) => None,
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Replay `events` through the library and the reference model; the first mismatch, if any.
pub fn compare_with_reference(kind: Kind, p: &Params, events: &[Event]) -> Result<usize, String> {
    let mut lib = clock2q::PolicyState::new(policy_kind(kind), library_config(kind, p)).map_err(|e| e.to_string())?;
    let mut model = reference::Reference::new(kind, p);
    let mut accesses = 0;
    for (i, ev) in events.iter().enumerate() {
        match *ev {
            Event::Access { key, write } => {
                accesses += 1;
                let got = as_step(&lib.access(clock2q::BlockId(key), write));
                let want = model.access(key, write);
                if got != want {
                    return Err(format!("{kind:?} event {i} key {key} write {write}: library {got:?}, reference {want:?}"));
                }
            }
            Event::Flush(key) => {
                let got = lib.flush_block(clock2q::BlockId(key));
                let want = model.flush(key);
                if got != want {
                    return Err(format!("{kind:?} event {i} flush {key}: library {got}, reference {want}"));
                }
            }
        }
    }
    let mut a: Vec<u64> = model.resident();
    a.sort_unstable();
    let snap = lib.snapshot();
    let mut b: Vec<u64> = snap.small.iter().chain(snap.main.iter()).map(|e| e.key.0).collect();
    b.sort_unstable();
    if a != b {
        return Err(format!("{kind:?}: resident sets differ at the end"));
    }
    let ghost: Vec<u64> = snap.ghost.iter().map(|k| k.0).collect();
    if ghost != model.ghost_keys() {
        return Err(format!("{kind:?}: ghost contents differ at the end"));
    }
    Ok(accesses)
}
