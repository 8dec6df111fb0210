mod support;

use std::collections::HashMap;

use clock2q::analysis::miss_ratio_curve;
use clock2q::policy::{Destination, QueueId};
use clock2q::sim::{simulate, CacheSize, ConfigOverrides, DirtyModel};
use clock2q::trace::{
    derive_metadata, generate_correlated, generate_zipf, load_trace, write_trace, CorrelatedSpec, Format, Op, OpMode,
    Trace, TraceRequest, ZipfSpec,
};
use clock2q::{BlockId, PolicyConfig, PolicyKind, PolicyState};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = PolicyKind> {
    prop::sample::select(PolicyKind::ALL.to_vec())
}

#[derive(Debug, Clone)]
enum Op2 {
    Access(u64, bool),
    Flush(u64),
}

fn ops(universe: u64, len: usize) -> impl Strategy<Value = Vec<Op2>> {
    prop::collection::vec(
        prop_oneof![
            6 => (0..universe, prop::bool::weighted(0.3)).prop_map(|(k, w)| Op2::Access(k, w)),
            1 => (0..universe).prop_map(Op2::Flush),
        ],
        1..len,
    )
}

fn requests() -> impl Strategy<Value = Vec<TraceRequest>> {
    prop::collection::vec((0u64..5, any::<u64>(), any::<bool>(), any::<u32>()), 0..200).prop_map(|v| {
        let mut t = 0;
        v.into_iter()
            .map(|(dt, lbn, w, size)| {
                t += dt;
                TraceRequest {
                    time_sec: t,
                    lbn: BlockId(lbn),
                    op: if w { Op::Write } else { Op::Read },
                    size_bytes: size,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn policy_state_invariants(
        kind in kind(),
        total in 2usize..40,
        ops in ops(60, 600),
        limit in prop::option::of(1u32..5),
        cap in prop::option::of(1usize..8),
        promote in any::<bool>(),
    ) {
        let mut cfg = PolicyConfig::for_kind(kind, total)
            .with_reinsertion_limit(limit)
            .with_dirty_promote(promote);
        cfg.dirty_scan_cap = cap;
        let mut p = PolicyState::new(kind, cfg).unwrap();
        let sizes = p.sizes();
        for op in ops {
            match op {
                Op2::Flush(k) => {
                    let was = p.is_dirty(BlockId(k));
                    prop_assert_eq!(p.flush_block(BlockId(k)), was);
                    prop_assert!(!p.is_dirty(BlockId(k)));
                }
                Op2::Access(k, w) => {
                    let dirty_before: Vec<BlockId> = (0..60).map(BlockId).filter(|&b| p.is_dirty(b)).collect();
                    let o = p.access(BlockId(k), w);
                    for ev in &o.evictions {
                        let leaves = ev.source == QueueId::Main || ev.destination != Destination::Main;
                        prop_assert!(!(leaves && dirty_before.contains(&ev.key)), "dirty {} evicted", ev.key);
                        if let Some(l) = limit {
                            prop_assert!(ev.skipped_ref <= l);
                        }
                    }
                    if o.admitted {
                        prop_assert!(p.contains(BlockId(k)));
                        prop_assert_eq!(p.is_dirty(BlockId(k)), w || dirty_before.contains(&BlockId(k)));
                    } else {
                        prop_assert!(!p.contains(BlockId(k)));
                    }
                    prop_assert!(p.resident_count() <= sizes.total);
                    prop_assert!(p.small_occupancy() <= sizes.small);
                    prop_assert!(p.ghost_len() <= sizes.ghost);
                    prop_assert!(p.check_invariants().is_ok(), "{:?}", p.check_invariants());
                }
            }
        }
    }

    #[test]
    fn policy_is_deterministic(kind in kind(), total in 2usize..30, ops in ops(40, 300)) {
        let run = || {
            let mut p = PolicyState::with_defaults(kind, total).unwrap();
            ops.iter()
                .filter_map(|op| match *op {
                    Op2::Access(k, w) => Some(p.access(BlockId(k), w)),
                    Op2::Flush(k) => {
                        p.flush_block(BlockId(k));
                        None
                    }
                })
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn lru_miss_ratio_never_rises_with_size(keys in prop::collection::vec(0u64..50, 1..500)) {
        let trace = support::reads(&keys);
        let sizes: Vec<CacheSize> = (2..=50).map(CacheSize::Blocks).collect();
        let rows = miss_ratio_curve(&trace, &[PolicyKind::Lru], &sizes, &ConfigOverrides::default(), &DirtyModel::default()).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].total_blocks > w[0].total_blocks);
            prop_assert!(w[1].miss_ratio <= w[0].miss_ratio);
        }
    }

    #[test]
    fn simulator_accounting(
        kind in kind(),
        frac in prop::sample::select(vec![0.05, 0.1, 0.3]),
        seed in any::<u64>(),
        dirty in any::<bool>(),
    ) {
        let reqs = generate_zipf(&ZipfSpec::new(3000, 0.9, 300, seed).with_write_fraction(0.4).with_rate(50.0)).unwrap();
        let model = DirtyModel { enabled: dirty, ..DirtyModel::default() };
        let r = simulate(&Trace::new(reqs), kind, &ConfigOverrides::default(), CacheSize::Fraction(frac), &model).unwrap();
        prop_assert_eq!(r.hits + r.misses, r.requests);
        prop_assert_eq!(r.small_evictions, r.flow_small_to_main + r.flow_small_to_ghost + r.small_discards + r.giveups);
        prop_assert!(r.flow_ghost_to_main <= r.ghost_hits);
        prop_assert_eq!(r.skipped_ref_histogram.values().sum::<u64>(), r.main_evictions);
        if !dirty {
            prop_assert_eq!(r.bypasses + r.giveups + r.small_discards, 0);
        }
    }

    #[test]
    fn trace_round_trips(reqs in requests()) {
        for format in [Format::Csv, Format::Bin] {
            let mut buf = Vec::new();
            write_trace(&reqs, format, &mut buf).unwrap();
            let back = load_trace(buf.as_slice(), format, false).unwrap().requests;
            prop_assert_eq!(&back, &reqs);
        }
    }

    #[test]
    fn derived_ids_are_floors(reqs in requests(), fanout in 1u64..1000) {
        let out = derive_metadata(&reqs, fanout, OpMode::AllRead).unwrap();
        prop_assert_eq!(out.len(), reqs.len());
        for (a, b) in reqs.iter().zip(&out) {
            prop_assert_eq!(b.lbn.0, a.lbn.0 / fanout);
            prop_assert_eq!(b.op, Op::Read);
            prop_assert_eq!(b.time_sec, a.time_sec);
        }
        prop_assert!(Trace::new(out).meta.footprint <= Trace::new(reqs).meta.footprint);
    }

    #[test]
    fn correlated_copies_land_within_span(
        n in 1u64..400,
        k in 2usize..5,
        extra_span in 0usize..20,
        fraction in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let span = k + extra_span;
        let base: Vec<_> = (0..n).map(|i| TraceRequest::read(i * 7 % 401)).collect();
        let spec = CorrelatedSpec { burst_k: k, burst_span: span, fraction, seed };
        let out = generate_correlated(&base, &spec).unwrap();
        let mut positions: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (i, r) in out.iter().enumerate() {
            let p = positions.entry(r.lbn.0).or_default();
            if p.is_empty() {
                order.push(r.lbn);
            }
            p.push(i);
        }
        let firsts: Vec<_> = base.iter().map(|r| r.lbn).collect();
        prop_assert_eq!(order, firsts);
        let mut selected = 0;
        for pos in positions.values() {
            prop_assert!(pos.len() == 1 || pos.len() == k, "{} copies", pos.len());
            if pos.len() == k {
                selected += 1;
                prop_assert!(pos[k - 1] - pos[0] <= span);
            }
        }
        prop_assert_eq!(out.len(), base.len() + selected * (k - 1));
        if fraction == 1.0 {
            prop_assert_eq!(selected, base.len());
        }
    }

    #[test]
    fn window_never_promotes_pure_bursts(k in 2usize..6, total in 100usize..2000, seed in any::<u64>()) {
        let window = PolicyConfig::for_kind(PolicyKind::Clock2QPlus, total).sizes().window;
        prop_assume!(window >= k);
        let base: Vec<_> = (0..3000u64).map(TraceRequest::read).collect();
        let spec = CorrelatedSpec { burst_k: k, burst_span: window, fraction: 1.0, seed };
        let trace = Trace::new(generate_correlated(&base, &spec).unwrap());
        let r = simulate(&trace, PolicyKind::Clock2QPlus, &ConfigOverrides::default(), CacheSize::Blocks(total), &DirtyModel::default()).unwrap();
        prop_assert_eq!(r.flow_small_to_main, 0);
    }
}

#[test]
fn clock_hand_clears_two_then_evicts() {
    let mut p = PolicyState::with_defaults(PolicyKind::Clock, 3).unwrap();
    for k in [1, 2, 3, 1, 2] {
        p.access(BlockId(k), false);
    }
    let o = p.access(BlockId(4), false);
    assert_eq!(o.evictions.len(), 1);
    assert_eq!((o.evictions[0].key, o.evictions[0].skipped_ref), (BlockId(3), 2));
}

#[test]
fn reinsertion_limit_forces_eleventh() {
    let cfg = PolicyConfig::for_kind(PolicyKind::Clock, 11).with_reinsertion_limit(Some(10));
    let mut p = PolicyState::new(PolicyKind::Clock, cfg).unwrap();
    for k in (0..11).chain(0..11) {
        p.access(BlockId(k), false);
    }
    let o = p.access(BlockId(99), false);
    assert_eq!((o.evictions[0].key, o.evictions[0].skipped_ref), (BlockId(10), 10));
}

#[test]
fn zipf_rank_frequency_slope() {
    for alpha in [0.8, 1.0, 1.2] {
        let reqs = generate_zipf(&ZipfSpec::new(1_000_000, alpha, 10_000, 42)).unwrap();
        let mut counts = vec![0u64; 10_000];
        for r in &reqs {
            counts[r.lbn.0 as usize] += 1;
        }
        // Least-squares slope of log(count) on log(rank) over the well-populated head.
        let pts: Vec<(f64, f64)> = (0..1000)
            .map(|i| (((i + 1) as f64).ln(), (counts[i] as f64).ln()))
            .collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        let (mx, my) = (sx / n, sy / n);
        let cov: f64 = pts.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
        let var: f64 = pts.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
        let slope = cov / var;
        assert!((slope + alpha).abs() <= 0.05 * alpha, "alpha {alpha}: slope {slope}");
    }
}
