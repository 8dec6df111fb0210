use std::collections::HashMap;
use std::ffi::{c_int, c_void, CStr};
use std::ptr;
use std::sync::Mutex;
use std::thread;

use clock2q::sim::{simulate, CacheSize, ConfigOverrides, DirtyModel};
use clock2q::trace::{Trace, TraceRequest};
use clock2q::PolicyKind;
use clock2q_ffi::*;

const BLOCK: usize = 32;

#[derive(Default)]
struct Disk {
    blocks: Mutex<HashMap<u64, Vec<u8>>>,
    fail_load: Mutex<Option<u64>>,
}

unsafe extern "C" fn load(ctx: *mut c_void, key: u64, buf: *mut u8, len: usize) -> c_int {
    let disk = &*(ctx as *const Disk);
    if *disk.fail_load.lock().unwrap() == Some(key) {
        return -5;
    }
    let out = std::slice::from_raw_parts_mut(buf, len);
    match disk.blocks.lock().unwrap().get(&key) {
        Some(b) => out.copy_from_slice(b),
        None => {
            out.fill(0);
            out[..8].copy_from_slice(&key.to_le_bytes());
        }
    }
    0
}

unsafe extern "C" fn store(ctx: *mut c_void, key: u64, buf: *const u8, len: usize) -> c_int {
    let disk = &*(ctx as *const Disk);
    disk.blocks.lock().unwrap().insert(key, std::slice::from_raw_parts(buf, len).to_vec());
    0
}

unsafe extern "C" fn failing_store(_: *mut c_void, _: u64, _: *const u8, _: usize) -> c_int {
    1
}

struct Cache(*mut C2qCache);

unsafe impl Send for Cache {}
unsafe impl Sync for Cache {}

impl Drop for Cache {
    fn drop(&mut self) {
        unsafe { c2q_cache_free(self.0) }
    }
}

fn config(total: usize, disk: &Disk) -> C2qConfig {
    let mut c = unsafe { std::mem::zeroed::<C2qConfig>() };
    assert_eq!(unsafe { c2q_config_default(total, BLOCK, &mut c) }, C2qStatus::Ok);
    c.load = Some(load);
    c.store = Some(store);
    c.ctx = disk as *const Disk as *mut c_void;
    c
}

fn new_cache(c: &C2qConfig) -> Cache {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { c2q_cache_new(c, &mut h) }, C2qStatus::Ok);
    assert!(!h.is_null());
    Cache(h)
}

fn read(c: &Cache, key: u64) -> (Vec<u8>, bool) {
    let mut buf = vec![0u8; BLOCK];
    let mut hit = false;
    let s = unsafe { c2q_cache_read(c.0, key, buf.as_mut_ptr(), BLOCK, &mut hit) };
    assert_eq!(s, C2qStatus::Ok, "{}", last_error());
    (buf, hit)
}

fn stats(c: &Cache) -> C2qStats {
    let mut s = C2qStats::default();
    assert_eq!(unsafe { c2q_cache_stats(c.0, &mut s) }, C2qStatus::Ok);
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(c2q_last_error()) }.to_string_lossy().into_owned()
}

fn violations(c: &Cache) -> usize {
    let mut v = usize::MAX;
    assert_eq!(unsafe { c2q_cache_check(c.0, &mut v) }, C2qStatus::Ok);
    v
}

#[test]
fn defaults_match_clock2q_plus() {
    let disk = Disk::default();
    let c = config(1000, &disk);
    assert_eq!((c.small_frac, c.ghost_frac, c.window_frac), (0.1, 0.5, 0.5));
    assert_eq!((c.total_blocks, c.block_size, c.reserve_blocks, c.reinsertion_limit), (1000, BLOCK, 0, 0));
}

#[test]
fn read_miss_then_hit() {
    let disk = Disk::default();
    let c = new_cache(&config(100, &disk));
    let (buf, hit) = read(&c, 42);
    assert!(!hit);
    assert_eq!(&buf[..8], &42u64.to_le_bytes());
    let (again, hit) = read(&c, 42);
    assert!(hit);
    assert_eq!(again, buf);
    let s = stats(&c);
    assert_eq!((s.requests, s.hits, s.misses, s.loads, s.resident, s.capacity), (2, 1, 1, 1, 1, 100));
}

#[test]
fn write_flush_reaches_store() {
    let disk = Disk::default();
    let c = new_cache(&config(100, &disk));
    let data = [7u8; BLOCK];
    assert_eq!(unsafe { c2q_cache_write(c.0, 5, data.as_ptr(), BLOCK) }, C2qStatus::Ok);
    assert_eq!(stats(&c).dirty, 1);
    assert_eq!(read(&c, 5), (data.to_vec(), true));
    let mut n = 0;
    assert_eq!(unsafe { c2q_cache_flush(c.0, C2qFlushMode::All, 0, 0.0, 0.0, &mut n) }, C2qStatus::Ok);
    assert_eq!(n, 1);
    assert_eq!(disk.blocks.lock().unwrap()[&5], data);
    assert_eq!(stats(&c).dirty, 0);
    // Watermark below the dirty fraction flushes nothing.
    assert_eq!(unsafe { c2q_cache_write(c.0, 6, data.as_ptr(), BLOCK) }, C2qStatus::Ok);
    assert_eq!(unsafe { c2q_cache_flush(c.0, C2qFlushMode::Watermark, 0, 0.1, 0.5, &mut n) }, C2qStatus::Ok);
    assert_eq!(n, 0);
    assert_eq!(unsafe { c2q_cache_flush(c.0, C2qFlushMode::Watermark, 0, 0.5, 0.1, &mut n) }, C2qStatus::InvalidArgument);
}

#[test]
fn resize_grow_and_shrink() {
    let disk = Disk::default();
    let mut cfg = config(100, &disk);
    cfg.reserve_blocks = 400;
    let c = new_cache(&cfg);
    for k in 0..100 {
        read(&c, k);
    }
    let data = [9u8; BLOCK];
    for k in 0..20 {
        assert_eq!(unsafe { c2q_cache_write(c.0, k, data.as_ptr(), BLOCK) }, C2qStatus::Ok);
    }
    let before = stats(&c);
    assert_eq!(unsafe { c2q_cache_resize(c.0, 400) }, C2qStatus::Ok);
    let after = stats(&c);
    assert_eq!(after.capacity, 400);
    assert_eq!(after.resident, before.resident);
    assert_eq!(after.dirty, 20);
    assert_eq!(
        (after.main_evictions, after.small_to_ghost, after.small_to_main),
        (before.main_evictions, before.small_to_ghost, before.small_to_main)
    );
    for k in 0..20 {
        assert_eq!(read(&c, k), (data.to_vec(), true), "block {k} lost by grow");
    }
    assert_eq!(unsafe { c2q_cache_resize(c.0, 10) }, C2qStatus::Ok);
    let s = stats(&c);
    assert_eq!(s.capacity, 10);
    assert!(s.resident <= 10);
    assert_eq!(violations(&c), 0);
    // Whatever survived the shrink may all be dirty; write it back so reads can evict.
    assert_eq!(unsafe { c2q_cache_flush(c.0, C2qFlushMode::All, 0, 0.0, 0.0, ptr::null_mut()) }, C2qStatus::Ok);
    for k in 0..20 {
        assert_eq!(read(&c, k).0, data, "write to {k} lost by shrink");
    }
    assert_eq!(unsafe { c2q_cache_resize(c.0, 401) }, C2qStatus::ExceedsReserve);
    assert!(last_error().contains("401"));
}

#[test]
fn errors_are_reported() {
    let disk = Disk::default();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { c2q_cache_new(ptr::null(), &mut h) }, C2qStatus::NullPointer);
    let mut bad = config(100, &disk);
    bad.small_frac = 0.0;
    assert_eq!(unsafe { c2q_cache_new(&bad, &mut h) }, C2qStatus::Config);
    assert!(h.is_null());
    assert!(!last_error().is_empty());

    let c = new_cache(&config(100, &disk));
    let mut small = [0u8; 4];
    assert_eq!(unsafe { c2q_cache_read(c.0, 1, small.as_mut_ptr(), 4, ptr::null_mut()) }, C2qStatus::BufferSize);
    assert_eq!(unsafe { c2q_cache_write(c.0, 1, small.as_ptr(), 4) }, C2qStatus::BufferSize);
    assert_eq!(unsafe { c2q_cache_read(c.0, 1, ptr::null_mut(), BLOCK, ptr::null_mut()) }, C2qStatus::NullPointer);
    assert_eq!(unsafe { c2q_cache_stats(ptr::null(), ptr::null_mut()) }, C2qStatus::NullPointer);

    *disk.fail_load.lock().unwrap() = Some(3);
    let mut buf = [0u8; BLOCK];
    assert_eq!(unsafe { c2q_cache_read(c.0, 3, buf.as_mut_ptr(), BLOCK, ptr::null_mut()) }, C2qStatus::Load);
    assert!(last_error().contains("-5"), "{}", last_error());
    *disk.fail_load.lock().unwrap() = None;
    assert!(!read(&c, 3).1);

    let mut cfg = config(100, &disk);
    cfg.store = Some(failing_store);
    let c = new_cache(&cfg);
    assert_eq!(unsafe { c2q_cache_write(c.0, 1, buf.as_ptr(), BLOCK) }, C2qStatus::Ok);
    assert_eq!(unsafe { c2q_cache_flush(c.0, C2qFlushMode::All, 0, 0.0, 0.0, ptr::null_mut()) }, C2qStatus::Flush);
    assert_eq!(stats(&c).dirty, 1);

    unsafe { c2q_cache_free(ptr::null_mut()) };
    let name = unsafe { CStr::from_ptr(c2q_status_str(C2qStatus::NoEvictable)) };
    assert_eq!(name.to_str().unwrap(), "no evictable entry");
}

#[test]
fn null_callbacks_zero_fill_and_discard() {
    let mut cfg = unsafe { std::mem::zeroed::<C2qConfig>() };
    unsafe { c2q_config_default(50, BLOCK, &mut cfg) };
    let c = new_cache(&cfg);
    assert_eq!(read(&c, 9), (vec![0; BLOCK], false));
    let data = [1u8; BLOCK];
    assert_eq!(unsafe { c2q_cache_write(c.0, 9, data.as_ptr(), BLOCK) }, C2qStatus::Ok);
    let mut n = 0;
    assert_eq!(unsafe { c2q_cache_flush(c.0, C2qFlushMode::Age, 0, 0.0, 0.0, &mut n) }, C2qStatus::Ok);
}

#[test]
fn shared_between_threads() {
    let disk = Disk::default();
    let c = new_cache(&config(500, &disk));
    thread::scope(|s| {
        for t in 0..4u64 {
            let c = &c;
            s.spawn(move || {
                let mut buf = vec![0u8; BLOCK];
                for i in 0..20_000u64 {
                    let key = (i * 7 + t * 13) % 2000;
                    assert_eq!(unsafe { c2q_cache_read(c.0, key, buf.as_mut_ptr(), BLOCK, ptr::null_mut()) }, C2qStatus::Ok);
                    assert_eq!(&buf[..8], &key.to_le_bytes());
                }
            });
        }
    });
    let s = stats(&c);
    assert_eq!(s.requests, 80_000);
    assert_eq!(s.hits + s.misses, s.requests);
    assert_eq!(violations(&c), 0);
}

#[test]
fn simulate_matches_library() {
    let keys: Vec<u64> = (0..20_000u64).map(|i| (i * i) % 1500 + i % 7).collect();
    let reqs: Vec<C2qRequest> = keys.iter().map(|&k| C2qRequest { time_sec: 0, lbn: k, is_write: 0 }).collect();
    let trace = Trace::new(keys.iter().map(|&k| TraceRequest::read(k)).collect());
    for (p, kind) in [
        (C2qPolicy::Lru, PolicyKind::Lru),
        (C2qPolicy::Clock, PolicyKind::Clock),
        (C2qPolicy::S3fifo1, PolicyKind::S3Fifo1Bit),
        (C2qPolicy::Clock2qPlus, PolicyKind::Clock2QPlus),
    ] {
        let mut out = C2qSimResult::default();
        assert_eq!(unsafe { c2q_simulate(reqs.as_ptr(), reqs.len(), p, 200, &mut out) }, C2qStatus::Ok);
        let want = simulate(&trace, kind, &ConfigOverrides::default(), CacheSize::Blocks(200), &DirtyModel::default()).unwrap();
        assert_eq!((out.hits, out.misses, out.small_to_main), (want.hits, want.misses, want.flow_small_to_main));
        assert_eq!(out.miss_ratio, want.miss_ratio);
    }
    let mut out = C2qSimResult::default();
    assert_eq!(unsafe { c2q_simulate(reqs.as_ptr(), reqs.len(), C2qPolicy::Lru, 1, &mut out) }, C2qStatus::Config);
}
