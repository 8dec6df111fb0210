//! Allocation counting for the concurrent cache's steady state.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

use clock2q::concurrent::{CacheOptions, ConcurrentCache, FlushPolicy};
use clock2q::error::IoCallbackError;
use clock2q::{BlockId, PolicyConfig, PolicyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Counting;

thread_local! {
    static ARMED: Cell<bool> = const { Cell::new(false) };
    static COUNT: Cell<u64> = const { Cell::new(0) };
}

fn note() {
    let _ = ARMED.try_with(|a| {
        if a.get() {
            COUNT.with(|c| c.set(c.get() + 1));
        }
    });
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        note();
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        note();
        System.alloc_zeroed(layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        note();
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn counted<T>(f: impl FnOnce() -> T) -> (T, u64) {
    COUNT.with(|c| c.set(0));
    ARMED.with(|a| a.set(true));
    let out = f();
    ARMED.with(|a| a.set(false));
    (out, COUNT.with(|c| c.get()))
}

fn fill(key: BlockId, buf: &mut [u8]) -> Result<(), IoCallbackError> {
    buf[..8].copy_from_slice(&key.0.to_le_bytes());
    Ok(())
}

#[test]
fn counter_sees_allocations() {
    let (v, n) = counted(|| vec![1u8; 10]);
    assert_eq!((v.len(), n), (10, 1));
}

#[test]
fn no_allocation_after_init() {
    let cfg = PolicyConfig::for_kind(PolicyKind::Clock2QPlus, 4096);
    let cache = ConcurrentCache::new(CacheOptions::new(cfg, 64).reserve(8192)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ops: Vec<(u64, u8)> = (0..1_000_000)
        .map(|_| {
            let u: f64 = rng.random();
            (((u * u) * 20_000.0) as u64, rng.random_range(0..100))
        })
        .collect();
    let data = [7u8; 64];
    let (checksum, allocs) = counted(|| {
        let mut sum = 0u64;
        for (i, &(key, roll)) in ops.iter().enumerate() {
            let k = BlockId(key);
            match roll {
                0..=69 => sum += cache.get(k, fill).unwrap().read()[0] as u64,
                70..=89 => sum += cache.write(k, &data, fill).unwrap().read()[0] as u64,
                _ => sum += cache.get_if_present(k).unwrap().is_some() as u64,
            }
            if i % 1000 == 999 {
                sum += cache.flush(FlushPolicy::Watermark { low: 0.1, high: 0.2 }, |_, _| Ok(())).unwrap() as u64;
            }
            if i % 50_000 == 49_999 {
                sum += cache.flush(FlushPolicy::All, |_, _| Ok(())).unwrap() as u64;
            }
        }
        sum
    });
    assert!(checksum > 0);
    assert!(cache.stats().ghost_hits > 0 && cache.stats().main_evictions > 0);
    assert_eq!(allocs, 0, "allocations during 10^6 operations");
}
