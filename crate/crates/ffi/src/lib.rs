//! C ABI for the clock2q concurrent block cache and policy simulator.
//!
//! Every function returns a [`C2qStatus`]; `C2Q_STATUS_OK` is zero. On failure a message is
//! available from [`c2q_last_error`] on the calling thread. Handles are opaque and must be
//! released with their matching `_free` function.
//!
//! A cache handle may be shared between threads. The loader and store callbacks are called
//! from whichever thread needs them, with `ctx` passed through unchanged, so they must be
//! thread-safe.

#![allow(clippy::missing_safety_doc)]

use std::cell::{Cell, RefCell};
use std::ffi::{c_char, c_int, c_void, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use clock2q::concurrent::{CacheOptions, ConcurrentCache, FlushPolicy};
use clock2q::error::IoCallbackError;
use clock2q::sim::{simulate, CacheSize, ConfigOverrides, DirtyModel};
use clock2q::trace::{Op, Trace, TraceRequest};
use clock2q::{BlockId, CacheError, PolicyConfig, PolicyKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C2qStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A size or fraction in the configuration is out of range.
    Config = 3,
    /// The loader callback failed.
    Load = 4,
    /// Another thread's load of the same block failed.
    PeerLoad = 5,
    /// Every eviction candidate is dirty, pinned or loading; flush and retry.
    NoEvictable = 6,
    Contention = 7,
    ResizeBusy = 8,
    ExceedsReserve = 9,
    /// The store callback failed during a flush or shrink.
    Flush = 10,
    BufferSize = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C2qPolicy {
    Lru = 0,
    Fifo = 1,
    Clock = 2,
    TwoQ = 3,
    Clock2q = 4,
    S3fifo1 = 5,
    S3fifo2 = 6,
    Clock2qPlus = 7,
}

impl From<C2qPolicy> for PolicyKind {
    fn from(p: C2qPolicy) -> Self {
        match p {
            C2qPolicy::Lru => PolicyKind::Lru,
            C2qPolicy::Fifo => PolicyKind::Fifo,
            C2qPolicy::Clock => PolicyKind::Clock,
            C2qPolicy::TwoQ => PolicyKind::TwoQ,
            C2qPolicy::Clock2q => PolicyKind::Clock2Q,
            C2qPolicy::S3fifo1 => PolicyKind::S3Fifo1Bit,
            C2qPolicy::S3fifo2 => PolicyKind::S3Fifo2Bit,
            C2qPolicy::Clock2qPlus => PolicyKind::Clock2QPlus,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum C2qFlushMode {
    /// Flush every dirty block.
    All = 0,
    /// Flush blocks dirty for longer than `age_sec`.
    Age = 1,
    /// If more than `high` of capacity is dirty, flush oldest first down to `low`.
    Watermark = 2,
}

/// Reads block `key` into `buf` (`len` bytes). Returns 0 on success.
pub type C2qLoadFn = Option<unsafe extern "C" fn(ctx: *mut c_void, key: u64, buf: *mut u8, len: usize) -> c_int>;
/// Writes back dirty block `key` from `buf` (`len` bytes). Returns 0 on success.
pub type C2qStoreFn = Option<unsafe extern "C" fn(ctx: *mut c_void, key: u64, buf: *const u8, len: usize) -> c_int>;

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct C2qConfig {
    pub total_blocks: usize,
    pub block_size: usize,
    /// Largest capacity a later resize may ask for; 0 means `total_blocks`.
    pub reserve_blocks: usize,
    pub small_frac: f64,
    pub ghost_frac: f64,
    pub window_frac: f64,
    /// Ref-set entries the clock hand may skip per eviction; 0 is unbounded.
    pub reinsertion_limit: u32,
    pub load: C2qLoadFn,
    pub store: C2qStoreFn,
    pub ctx: *mut c_void,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct C2qStats {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub errors: u64,
    pub loads: u64,
    pub lost_races: u64,
    pub io_waits: u64,
    pub ghost_hits: u64,
    pub small_to_main: u64,
    pub small_to_ghost: u64,
    pub main_evictions: u64,
    pub giveups: u64,
    pub writes: u64,
    pub flushed: u64,
    pub capacity: u64,
    pub resident: u64,
    pub dirty: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct C2qRequest {
    pub time_sec: u64,
    pub lbn: u64,
    /// Nonzero for a write.
    pub is_write: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct C2qSimResult {
    pub total_blocks: u64,
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
    pub miss_ratio: f64,
    pub small_to_main: u64,
    pub small_to_ghost: u64,
    pub ghost_to_main: u64,
}

/// Opaque cache handle.
pub struct C2qCache {
    cache: ConcurrentCache,
    load: C2qLoadFn,
    store: C2qStoreFn,
    ctx: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: C2qStatus, msg: impl Into<String>) -> C2qStatus {
    set_error(msg);
    status
}

fn from_cache_error(e: CacheError) -> C2qStatus {
    let status = match &e {
        CacheError::Config(_) => C2qStatus::Config,
        CacheError::Load { .. } => C2qStatus::Load,
        CacheError::PeerLoadFailed(_) => C2qStatus::PeerLoad,
        CacheError::Contention { .. } => C2qStatus::Contention,
        CacheError::NoEvictableEntry => C2qStatus::NoEvictable,
        CacheError::PayloadSize { .. } => C2qStatus::BufferSize,
        CacheError::ExceedsReserve { .. } => C2qStatus::ExceedsReserve,
        CacheError::ResizeBusy => C2qStatus::ResizeBusy,
        CacheError::Flush { .. } => C2qStatus::Flush,
        CacheError::UnknownSyncPoint(_) | CacheError::SyncPointTimeout(_) => C2qStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Run `f`, turning a panic into `C2Q_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> C2qStatus) -> C2qStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(C2qStatus::Panic, msg)
        }
    }
}

impl C2qCache {
    fn loader<'a>(&'a self, missed: &'a Cell<bool>) -> impl FnOnce(BlockId, &mut [u8]) -> Result<(), IoCallbackError> + 'a {
        move |key, buf| {
            missed.set(true);
            match self.load {
                None => {
                    buf.fill(0);
                    Ok(())
                }
                Some(f) => match unsafe { f(self.ctx as *mut c_void, key.0, buf.as_mut_ptr(), buf.len()) } {
                    0 => Ok(()),
                    rc => Err(format!("load callback returned {rc}").into()),
                },
            }
        }
    }

    fn sink(&self) -> impl FnMut(BlockId, &[u8]) -> Result<(), IoCallbackError> + '_ {
        move |key, buf| match self.store {
            None => Ok(()),
            Some(f) => match unsafe { f(self.ctx as *mut c_void, key.0, buf.as_ptr(), buf.len()) } {
                0 => Ok(()),
                rc => Err(format!("store callback returned {rc}").into()),
            },
        }
    }
}

/// Fill `out` with the default Clock2Q+ fractions for a cache of `total_blocks`.
#[no_mangle]
pub unsafe extern "C" fn c2q_config_default(total_blocks: usize, block_size: usize, out: *mut C2qConfig) -> C2qStatus {
    guard(|| {
        if out.is_null() {
            return fail(C2qStatus::NullPointer, "out is null");
        }
        let d = PolicyConfig::for_kind(PolicyKind::Clock2QPlus, total_blocks);
        out.write(C2qConfig {
            total_blocks,
            block_size,
            reserve_blocks: 0,
            small_frac: d.small_frac,
            ghost_frac: d.ghost_frac,
            window_frac: d.window_frac,
            reinsertion_limit: 0,
            load: None,
            store: None,
            ctx: ptr::null_mut(),
        });
        C2qStatus::Ok
    })
}

/// Create a cache. A null `load` fills missing blocks with zeros; a null `store` discards
/// flushed data.
#[no_mangle]
pub unsafe extern "C" fn c2q_cache_new(config: *const C2qConfig, out: *mut *mut C2qCache) -> C2qStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return fail(C2qStatus::NullPointer, "config or out is null");
        }
        let c = &*config;
        let mut policy = PolicyConfig::for_kind(PolicyKind::Clock2QPlus, c.total_blocks);
        policy.small_frac = c.small_frac;
        policy.ghost_frac = c.ghost_frac;
        policy.window_frac = c.window_frac;
        policy.reinsertion_limit = (c.reinsertion_limit > 0).then_some(c.reinsertion_limit);
        let reserve = if c.reserve_blocks == 0 { c.total_blocks } else { c.reserve_blocks };
        match ConcurrentCache::new(CacheOptions::new(policy, c.block_size).reserve(reserve)) {
            Ok(cache) => {
                out.write(Box::into_raw(Box::new(C2qCache {
                    cache,
                    load: c.load,
                    store: c.store,
                    ctx: c.ctx as usize,
                })));
                C2qStatus::Ok
            }
            Err(e) => from_cache_error(e),
        }
    })
}

/// Destroy a cache. Dirty blocks are not flushed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn c2q_cache_free(cache: *mut C2qCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Copy block `key` into `buf`, loading it on a miss. `len` must equal the block size.
/// `hit` may be null.
#[no_mangle]
pub unsafe extern "C" fn c2q_cache_read(
    cache: *const C2qCache,
    key: u64,
    buf: *mut u8,
    len: usize,
    hit: *mut bool,
) -> C2qStatus {
    guard(|| {
        if cache.is_null() || buf.is_null() {
            return fail(C2qStatus::NullPointer, "cache or buf is null");
        }
        let c = &*cache;
        if len != c.cache.block_size() {
            return fail(C2qStatus::BufferSize, format!("buffer is {len} bytes, block size is {}", c.cache.block_size()));
        }
        let missed = Cell::new(false);
        match c.cache.get(BlockId(key), c.loader(&missed)) {
            Ok(h) => {
                h.copy_to(std::slice::from_raw_parts_mut(buf, len));
                if !hit.is_null() {
                    hit.write(!missed.get());
                }
                C2qStatus::Ok
            }
            Err(e) => from_cache_error(e),
        }
    })
}

/// Overwrite block `key` with `len` bytes from `data` and mark it dirty.
#[no_mangle]
pub unsafe extern "C" fn c2q_cache_write(cache: *const C2qCache, key: u64, data: *const u8, len: usize) -> C2qStatus {
    guard(|| {
        if cache.is_null() || data.is_null() {
            return fail(C2qStatus::NullPointer, "cache or data is null");
        }
        let c = &*cache;
        let missed = Cell::new(false);
        match c.cache.write(BlockId(key), std::slice::from_raw_parts(data, len), c.loader(&missed)) {
            Ok(_) => C2qStatus::Ok,
            Err(e) => from_cache_error(e),
        }
    })
}

/// Write dirty blocks back through the store callback. `flushed` may be null.
#[no_mangle]
pub unsafe extern "C" fn c2q_cache_flush(
    cache: *const C2qCache,
    mode: C2qFlushMode,
    age_sec: u64,
    low: f64,
    high: f64,
    flushed: *mut usize,
) -> C2qStatus {
    guard(|| {
        if cache.is_null() {
            return fail(C2qStatus::NullPointer, "cache is null");
        }
        let c = &*cache;
        let policy = match mode {
            C2qFlushMode::All => FlushPolicy::All,
            C2qFlushMode::Age => FlushPolicy::Age(age_sec),
            C2qFlushMode::Watermark => {
                if !(0.0 <= low && low <= high && high <= 1.0) {
                    return fail(C2qStatus::InvalidArgument, format!("need 0 <= low ({low}) <= high ({high}) <= 1"));
                }
                FlushPolicy::Watermark { low, high }
            }
        };
        match c.cache.flush(policy, c.sink()) {
            Ok(n) => {
                if !flushed.is_null() {
                    flushed.write(n);
                }
                C2qStatus::Ok
            }
            Err(e) => from_cache_error(e),
        }
    })
}

/// Change capacity while other threads keep using the cache. Shrinking writes dirty
/// blocks back through the store callback.
#[no_mangle]
pub unsafe extern "C" fn c2q_cache_resize(cache: *const C2qCache, new_total_blocks: usize) -> C2qStatus {
    guard(|| {
        if cache.is_null() {
            return fail(C2qStatus::NullPointer, "cache is null");
        }
        let c = &*cache;
        match c.cache.resize(new_total_blocks, c.sink()) {
            Ok(_) => C2qStatus::Ok,
            Err(e) => from_cache_error(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn c2q_cache_stats(cache: *const C2qCache, out: *mut C2qStats) -> C2qStatus {
    guard(|| {
        if cache.is_null() || out.is_null() {
            return fail(C2qStatus::NullPointer, "cache or out is null");
        }
        let c = &(*cache).cache;
        let s = c.stats();
        out.write(C2qStats {
            requests: s.requests,
            hits: s.hits,
            misses: s.misses,
            errors: s.errors,
            loads: s.loads,
            lost_races: s.lost_races,
            io_waits: s.io_waits,
            ghost_hits: s.ghost_hits,
            small_to_main: s.small_to_main,
            small_to_ghost: s.small_to_ghost,
            main_evictions: s.main_evictions,
            giveups: s.giveups,
            writes: s.writes,
            flushed: s.flushed,
            capacity: c.capacity() as u64,
            resident: c.len() as u64,
            dirty: c.dirty_count() as u64,
        });
        C2qStatus::Ok
    })
}

/// Walk every structure and count invariant violations into `violations`.
#[no_mangle]
pub unsafe extern "C" fn c2q_cache_check(cache: *const C2qCache, violations: *mut usize) -> C2qStatus {
    guard(|| {
        if cache.is_null() || violations.is_null() {
            return fail(C2qStatus::NullPointer, "cache or violations is null");
        }
        let report = (*cache).cache.check_invariants();
        violations.write(report.violations.len());
        if let Some(v) = report.violations.first() {
            set_error(v.clone());
        }
        C2qStatus::Ok
    })
}

/// Replay `n` requests through `policy` at `total_blocks` with default fractions.
#[no_mangle]
pub unsafe extern "C" fn c2q_simulate(
    requests: *const C2qRequest,
    n: usize,
    policy: C2qPolicy,
    total_blocks: usize,
    out: *mut C2qSimResult,
) -> C2qStatus {
    guard(|| {
        if (requests.is_null() && n > 0) || out.is_null() {
            return fail(C2qStatus::NullPointer, "requests or out is null");
        }
        let reqs = if n == 0 { &[][..] } else { std::slice::from_raw_parts(requests, n) };
        let trace = Trace::new(
            reqs.iter()
                .map(|r| TraceRequest {
                    time_sec: r.time_sec,
                    lbn: BlockId(r.lbn),
                    op: if r.is_write != 0 { Op::Write } else { Op::Read },
                    size_bytes: 4096,
                })
                .collect(),
        );
        let size = CacheSize::Blocks(total_blocks);
        match simulate(&trace, policy.into(), &ConfigOverrides::default(), size, &DirtyModel::default()) {
            Ok(r) => {
                out.write(C2qSimResult {
                    total_blocks: r.total_blocks as u64,
                    requests: r.requests,
                    hits: r.hits,
                    misses: r.misses,
                    miss_ratio: r.miss_ratio,
                    small_to_main: r.flow_small_to_main,
                    small_to_ghost: r.flow_small_to_ghost,
                    ghost_to_main: r.flow_ghost_to_main,
                });
                C2qStatus::Ok
            }
            Err(e) => fail(C2qStatus::Config, e.to_string()),
        }
    })
}

/// Message for the last failed call on this thread, or the first violation found by
/// [`c2q_cache_check`]. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn c2q_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn c2q_status_str(status: C2qStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        C2qStatus::Ok => b"ok\0",
        C2qStatus::NullPointer => b"null pointer\0",
        C2qStatus::InvalidArgument => b"invalid argument\0",
        C2qStatus::Config => b"invalid configuration\0",
        C2qStatus::Load => b"load failed\0",
        C2qStatus::PeerLoad => b"peer load failed\0",
        C2qStatus::NoEvictable => b"no evictable entry\0",
        C2qStatus::Contention => b"contention\0",
        C2qStatus::ResizeBusy => b"resize busy\0",
        C2qStatus::ExceedsReserve => b"exceeds reserve\0",
        C2qStatus::Flush => b"flush failed\0",
        C2qStatus::BufferSize => b"buffer size mismatch\0",
        C2qStatus::Panic => b"panic\0",
    };
    s.as_ptr().cast()
}
