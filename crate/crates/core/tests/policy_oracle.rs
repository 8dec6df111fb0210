mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::reference::{Params, ALL_KINDS};
use support::{compare_with_reference, random_events};

#[test]
fn read_only_small_caches() {
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let universe = rng.random_range(5..60);
        let events = random_events(&mut rng, 3000, universe, 0.0, 0.0);
        let total = rng.random_range(2..(universe as usize).max(3));
        for kind in ALL_KINDS {
            compare_with_reference(kind, &Params::defaults(kind, total), &events).unwrap();
        }
    }
}

#[test]
fn writes_flushes_and_knobs() {
    for seed in 0..60 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let universe = rng.random_range(10..200);
        let events = random_events(&mut rng, 4000, universe, 0.3, 0.2);
        let total = rng.random_range(4..(universe as usize / 2).max(5));
        for kind in ALL_KINDS {
            let mut p = Params::defaults(kind, total);
            p.ref_skip_limit = rng.random_bool(0.5).then(|| rng.random_range(1..4));
            p.scan_cap = rng.random_bool(0.5).then(|| rng.random_range(1..6));
            p.promote_dirty = rng.random_bool(0.5);
            compare_with_reference(kind, &p, &events).unwrap();
        }
    }
}

#[test]
fn all_dirty_main_bypasses() {
    // Every access is a write and nothing is flushed: Main fills with dirty blocks.
    let events: Vec<_> = (0..200u64)
        .map(|k| support::Event::Access { key: k % 37, write: true })
        .collect();
    for kind in ALL_KINDS {
        compare_with_reference(kind, &Params::defaults(kind, 10), &events).unwrap();
    }
}
