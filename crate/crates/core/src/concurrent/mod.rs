//! A thread-safe, fixed-capacity Clock2Q+ block cache.
//!
//! Layout: one entry array (Small FIFO slots followed by Main clock slots) and one bucket
//! array, both allocated for the reserved maximum capacity at construction. Buckets hold
//! the head of a collision chain; entries link to each other by slot index.
//!
//! Locking:
//! - each bucket has a mutex over its chain head;
//! - each entry has a mutex over its replacement state and a condvar for Doing-I/O waiters;
//! - payloads sit behind their own reader/writer lock, only ever taken last.
//!
//! Lookups lock a bucket, find the entry index, unlock the bucket, then lock the entry and
//! re-check its key, retrying if the entry was recycled in between. Mutations lock entries
//! first (Small before Main) and buckets second, two buckets in ascending index order.
//! Nothing holds a bucket lock while waiting for an entry lock.

mod clock;
mod syncpoint;

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use parking_lot::{Condvar, MappedRwLockReadGuard, Mutex, MutexGuard, RwLock, RwLockReadGuard};

pub use self::clock::{Clock, ManualClock, SystemClock};
pub use self::syncpoint::{SyncPointCtl, SyncPointId, SyncPoints};

use crate::error::{CacheError, ConfigError, IoCallbackError};
use crate::policy::{GhostFifo, PolicyConfig, QueueSizes};
use crate::BlockId;

const NIL: u32 = u32::MAX;
const REHASH_BATCH: usize = 1024;
pub const DEFAULT_RETRY_CAP: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotState {
    Empty,
    DoingIo,
    Resident,
    /// Load failed; waiters report the failure. Reusable like `Empty`.
    Failed,
}

#[derive(Debug)]
struct Meta {
    state: SlotState,
    key: BlockId,
    ref_bit: bool,
    dirty: bool,
    dirty_since: u64,
    pins: u32,
    /// Small FIFO insertion counter value, for the correlation window.
    insert_seq: u64,
}

impl Meta {
    fn is_free(&self) -> bool {
        matches!(self.state, SlotState::Empty | SlotState::Failed)
    }
}

struct Entry {
    meta: Mutex<Meta>,
    io_done: Condvar,
    /// Copy of the key for chain walks under the bucket lock.
    key: AtomicU64,
    next: AtomicU32,
    payload: RwLock<Box<[u8]>>,
}

#[cfg(debug_assertions)]
thread_local! {
    static BUCKETS_HELD: std::cell::Cell<u32> = const { std::cell::Cell::new(0) };
}

struct BucketGuard<'a> {
    idx: usize,
    head: MutexGuard<'a, u32>,
}

impl Drop for BucketGuard<'_> {
    fn drop(&mut self) {
        #[cfg(debug_assertions)]
        BUCKETS_HELD.with(|c| c.set(c.get() - 1));
    }
}

/// One or two locked buckets: a key's current location and, mid-resize, its old one.
struct Locked<'a> {
    new: usize,
    old: usize,
    guards: [Option<BucketGuard<'a>>; 2],
}

impl Locked<'_> {
    fn head(&mut self, idx: usize) -> &mut u32 {
        for g in self.guards.iter_mut().flatten() {
            if g.idx == idx {
                return &mut g.head;
            }
        }
        unreachable!("bucket {idx} not locked")
    }
}

fn pack(old: usize, new: usize) -> u64 {
    ((old as u64) << 32) | new as u64
}

fn unpack(v: u64) -> (usize, usize) {
    ((v >> 32) as usize, (v & 0xffff_ffff) as usize)
}

fn bucket_of(key: BlockId, buckets: usize) -> usize {
    let h = key.0.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ((h as u128 * buckets as u128) >> 64) as usize
}

fn backoff(attempt: u32) {
    if attempt < 4 {
        std::hint::spin_loop();
    } else {
        thread::yield_now();
    }
}

/// What to flush.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlushPolicy {
    /// Blocks dirty for strictly longer than this many seconds.
    Age(u64),
    /// If more than `high` of capacity is dirty, flush oldest first down to `low`.
    Watermark { low: f64, high: f64 },
    All,
}

#[derive(Clone)]
pub struct CacheOptions {
    /// Initial capacity and replacement fractions. `freq_bits` is ignored: the cache
    /// always uses a 1-bit reference flag.
    pub policy: PolicyConfig,
    pub block_size: usize,
    /// Largest capacity a later resize may grow to.
    pub reserve_max_blocks: usize,
    pub retry_cap: u32,
    pub clock: Arc<dyn Clock>,
}

impl CacheOptions {
    pub fn new(policy: PolicyConfig, block_size: usize) -> Self {
        CacheOptions {
            reserve_max_blocks: policy.total_blocks,
            policy,
            block_size,
            retry_cap: DEFAULT_RETRY_CAP,
            clock: Arc::new(SystemClock::default()),
        }
    }

    pub fn reserve(mut self, reserve_max_blocks: usize) -> Self {
        self.reserve_max_blocks = reserve_max_blocks;
        self
    }

    pub fn retry_cap(mut self, cap: u32) -> Self {
        self.retry_cap = cap;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }
}

macro_rules! counters {
    ($($name:ident),* $(,)?) => {
        #[derive(Default)]
        struct Counters { $($name: AtomicU64,)* }

        /// Point-in-time copy of the cache's event counters.
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
        pub struct CacheStats { $(pub $name: u64,)* }

        impl Counters {
            fn snapshot(&self) -> CacheStats {
                CacheStats { $($name: self.$name.load(Ordering::Relaxed),)* }
            }
        }
    };
}

counters!(
    requests,
    hits,
    misses,
    errors,
    loads,
    load_failures,
    io_waits,
    lost_races,
    abandoned_inserts,
    migrations,
    ghost_hits,
    small_to_main,
    small_to_ghost,
    small_discards,
    giveups,
    main_evictions,
    small_dirty_skips,
    main_dirty_skips,
    main_ref_skips,
    max_ref_skips,
    writes,
    flushed,
);

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ResizeReport {
    pub from: usize,
    pub to: usize,
    /// Entries moved to their new bucket by the rehash pass.
    pub rehashed: usize,
    /// Tail entries dropped by a shrink.
    pub discarded: usize,
    /// Dirty tail entries written to the sink before being dropped.
    pub flushed: usize,
}

/// Summary from [`ConcurrentCache::check_invariants`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvariantReport {
    pub linked: usize,
    pub resident: usize,
    pub loading: usize,
    pub dirty: usize,
    pub pinned: usize,
    pub violations: Vec<String>,
}

impl InvariantReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

enum Claim {
    Loading(u32),
    Retry,
}

pub struct ConcurrentCache {
    config: PolicyConfig,
    block_size: usize,
    reserve: usize,
    small_reserve: usize,
    retry_cap: u32,
    clock: Arc<dyn Clock>,

    entries: Box<[Entry]>,
    buckets: Box<[Mutex<u32>]>,
    /// Bucket counts, `old << 32 | new`; they differ only while a resize is rehashing.
    layout: AtomicU64,

    total: AtomicUsize,
    small_size: AtomicUsize,
    main_size: AtomicUsize,
    window: AtomicUsize,
    dirty_scan_cap: AtomicUsize,

    small_counter: AtomicU64,
    main_hand: AtomicU64,
    ghost: Mutex<GhostFifo>,

    small_occupied: AtomicUsize,
    main_occupied: AtomicUsize,
    dirty_entries: AtomicUsize,

    resize_lock: Mutex<()>,
    resizing: AtomicBool,
    flush_scratch: Mutex<Vec<(u64, u32)>>,
    stats: Counters,
    sync: SyncPoints,
}

/// A pinned, readable cache entry. The entry cannot be evicted or moved while the handle
/// is alive. Do not hold a [`read`](Self::read) guard across other calls into the cache.
pub struct CacheHandle<'a> {
    cache: &'a ConcurrentCache,
    id: u32,
    key: BlockId,
}

impl<'a> CacheHandle<'a> {
    pub fn key(&self) -> BlockId {
        self.key
    }

    pub fn read(&self) -> MappedRwLockReadGuard<'_, [u8]> {
        RwLockReadGuard::map(self.cache.entry(self.id).payload.read(), |b| &**b)
    }

    pub fn copy_to(&self, buf: &mut [u8]) {
        buf.copy_from_slice(&self.read());
    }
}

impl Drop for CacheHandle<'_> {
    fn drop(&mut self) {
        let mut m = self.cache.lock_entry(self.id);
        debug_assert!(m.pins > 0);
        m.pins -= 1;
    }
}

impl std::fmt::Debug for CacheHandle<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CacheHandle").field("key", &self.key).field("slot", &self.id).finish()
    }
}

impl ConcurrentCache {
    pub fn new(opts: CacheOptions) -> Result<Self, CacheError> {
        let cfg = opts.policy.clone();
        cfg.validate()?;
        if cfg.small_frac == 0.0 {
            return Err(ConfigError::InvalidField {
                field: "small_frac",
                reason: "the cache needs a Small FIFO".into(),
            }
            .into());
        }
        if opts.reserve_max_blocks < cfg.total_blocks {
            return Err(ConfigError::InvalidField {
                field: "reserve_max_blocks",
                reason: format!("{} is below total_blocks {}", opts.reserve_max_blocks, cfg.total_blocks),
            }
            .into());
        }
        if opts.reserve_max_blocks.saturating_mul(2) >= NIL as usize {
            return Err(ConfigError::InvalidField {
                field: "reserve_max_blocks",
                reason: "too large for 32-bit slot indices".into(),
            }
            .into());
        }
        if opts.block_size == 0 {
            return Err(ConfigError::InvalidField {
                field: "block_size",
                reason: "must be positive".into(),
            }
            .into());
        }
        if opts.retry_cap == 0 {
            return Err(ConfigError::InvalidField {
                field: "retry_cap",
                reason: "must be positive".into(),
            }
            .into());
        }
        let sizes = cfg.sizes();
        let max = PolicyConfig {
            total_blocks: opts.reserve_max_blocks,
            ..cfg.clone()
        }
        .sizes();
        let slots = max.small + max.main;
        let entries = (0..slots)
            .map(|_| Entry {
                meta: Mutex::new(Meta {
                    state: SlotState::Empty,
                    key: BlockId(0),
                    ref_bit: false,
                    dirty: false,
                    dirty_since: 0,
                    pins: 0,
                    insert_seq: 0,
                }),
                io_done: Condvar::new(),
                key: AtomicU64::new(0),
                next: AtomicU32::new(NIL),
                payload: RwLock::new(vec![0u8; opts.block_size].into_boxed_slice()),
            })
            .collect();
        let buckets = (0..2 * opts.reserve_max_blocks).map(|_| Mutex::new(NIL)).collect();
        let n = 2 * sizes.total;
        let mut ghost = GhostFifo::new(max.ghost);
        ghost.resize(sizes.ghost);
        Ok(ConcurrentCache {
            block_size: opts.block_size,
            reserve: opts.reserve_max_blocks,
            small_reserve: max.small,
            retry_cap: opts.retry_cap,
            clock: opts.clock,
            entries,
            buckets,
            layout: AtomicU64::new(pack(n, n)),
            total: AtomicUsize::new(sizes.total),
            small_size: AtomicUsize::new(sizes.small),
            main_size: AtomicUsize::new(sizes.main),
            window: AtomicUsize::new(sizes.window),
            dirty_scan_cap: AtomicUsize::new(sizes.dirty_scan_cap),
            small_counter: AtomicU64::new(0),
            main_hand: AtomicU64::new(0),
            ghost: Mutex::new(ghost),
            small_occupied: AtomicUsize::new(0),
            main_occupied: AtomicUsize::new(0),
            dirty_entries: AtomicUsize::new(0),
            resize_lock: Mutex::new(()),
            resizing: AtomicBool::new(false),
            flush_scratch: Mutex::new(Vec::with_capacity(slots)),
            stats: Counters::default(),
            sync: SyncPoints::default(),
            config: cfg,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn capacity(&self) -> usize {
        self.total.load(Ordering::Acquire)
    }

    pub fn reserve_max_blocks(&self) -> usize {
        self.reserve
    }

    pub fn sizes(&self) -> QueueSizes {
        PolicyConfig {
            total_blocks: self.capacity(),
            ..self.config.clone()
        }
        .sizes()
    }

    /// Resident plus loading entries.
    pub fn len(&self) -> usize {
        self.small_occupied.load(Ordering::Relaxed) + self.main_occupied.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dirty_count(&self) -> usize {
        self.dirty_entries.load(Ordering::Relaxed)
    }

    pub fn is_resizing(&self) -> bool {
        self.resizing.load(Ordering::Acquire)
    }

    pub fn stats(&self) -> CacheStats {
        self.stats.snapshot()
    }

    pub fn sync_points(&self) -> &SyncPoints {
        &self.sync
    }

    fn entry(&self, id: u32) -> &Entry {
        &self.entries[id as usize]
    }

    fn is_small(&self, id: u32) -> bool {
        (id as usize) < self.small_reserve
    }

    fn lock_entry(&self, id: u32) -> MutexGuard<'_, Meta> {
        #[cfg(debug_assertions)]
        BUCKETS_HELD.with(|c| {
            assert_eq!(c.get(), 0, "entry lock requested while holding a bucket lock")
        });
        self.entry(id).meta.lock()
    }

    fn lock_bucket(&self, idx: usize) -> BucketGuard<'_> {
        let head = self.buckets[idx].lock();
        #[cfg(debug_assertions)]
        BUCKETS_HELD.with(|c| c.set(c.get() + 1));
        BucketGuard { idx, head }
    }

    fn layout(&self) -> (usize, usize) {
        unpack(self.layout.load(Ordering::Acquire))
    }

    /// Lock the key's bucket under the current layout plus its old bucket mid-resize.
    fn lock_key(&self, key: BlockId) -> Locked<'_> {
        loop {
            let raw = self.layout.load(Ordering::Acquire);
            let (o, n) = unpack(raw);
            let (new, old) = (bucket_of(key, n), bucket_of(key, o));
            let locked = self.lock_pair(new, old);
            if self.layout.load(Ordering::Acquire) == raw {
                return Locked { new, old, guards: locked };
            }
        }
    }

    fn lock_pair(&self, a: usize, b: usize) -> [Option<BucketGuard<'_>>; 2] {
        let (lo, hi) = (a.min(b), a.max(b));
        let first = self.lock_bucket(lo);
        let second = (hi != lo).then(|| self.lock_bucket(hi));
        [Some(first), second]
    }

    fn chain_find(&self, head: u32, key: BlockId) -> Option<u32> {
        let mut cur = head;
        while cur != NIL {
            let e = self.entry(cur);
            if e.key.load(Ordering::Relaxed) == key.0 {
                return Some(cur);
            }
            cur = e.next.load(Ordering::Relaxed);
        }
        None
    }

    fn chain_contains(&self, head: u32, id: u32) -> bool {
        let mut cur = head;
        while cur != NIL {
            if cur == id {
                return true;
            }
            cur = self.entry(cur).next.load(Ordering::Relaxed);
        }
        false
    }

    /// Replace `id` in the chain by `with`, or remove it when `with` is `NIL`.
    fn chain_replace(&self, head: &mut u32, id: u32, with: u32) -> bool {
        let next = self.entry(id).next.load(Ordering::Relaxed);
        if with != NIL {
            self.entry(with).next.store(next, Ordering::Relaxed);
        }
        let replacement = if with == NIL { next } else { with };
        if *head == id {
            *head = replacement;
            return true;
        }
        let mut cur = *head;
        while cur != NIL {
            let e = self.entry(cur);
            let n = e.next.load(Ordering::Relaxed);
            if n == id {
                e.next.store(replacement, Ordering::Relaxed);
                return true;
            }
            cur = n;
        }
        false
    }

    fn chain_push(&self, head: &mut u32, id: u32) {
        self.entry(id).next.store(*head, Ordering::Relaxed);
        *head = id;
    }

    /// Swap the index link of `id` (holding `key`) for `with`, or unlink when `with` is NIL.
    /// The caller holds the entry lock of `id`.
    fn relink(&self, key: BlockId, id: u32, with: u32) {
        let mut l = self.lock_key(key);
        let (new, old) = (l.new, l.old);
        if with != NIL {
            self.entry(with).key.store(key.0, Ordering::Relaxed);
        }
        let done = self.chain_replace(l.head(new), id, with) || (old != new && self.chain_replace(l.head(old), id, with));
        debug_assert!(done, "entry {id} for {key} missing from its chain");
    }

    fn lookup(&self, key: BlockId) -> Option<u32> {
        let (_, n) = self.layout();
        let g = self.lock_bucket(bucket_of(key, n));
        self.chain_find(*g.head, key)
    }

    fn in_window(&self, m: &Meta) -> bool {
        let c = self.small_counter.load(Ordering::Relaxed);
        let distance = c.wrapping_sub(1).wrapping_sub(m.insert_seq);
        distance < self.window.load(Ordering::Relaxed) as u64
    }

    /// Look up `key`, loading it with `loader` on a miss. Concurrent callers for the same
    /// missing key wait for a single load.
    pub fn get<F>(&self, key: BlockId, loader: F) -> Result<CacheHandle<'_>, CacheError>
    where
        F: FnOnce(BlockId, &mut [u8]) -> Result<(), IoCallbackError>,
    {
        let h = self.acquire(key, Some(loader))?;
        Ok(h.expect("loader supplied"))
    }

    /// Look up `key` without loading it on a miss.
    pub fn get_if_present(&self, key: BlockId) -> Result<Option<CacheHandle<'_>>, CacheError> {
        self.acquire::<fn(BlockId, &mut [u8]) -> Result<(), IoCallbackError>>(key, None)
    }

    /// Overwrite a whole block and mark it dirty, loading it first on a miss.
    pub fn write<F>(&self, key: BlockId, data: &[u8], loader: F) -> Result<CacheHandle<'_>, CacheError>
    where
        F: FnOnce(BlockId, &mut [u8]) -> Result<(), IoCallbackError>,
    {
        if data.len() != self.block_size {
            return Err(CacheError::PayloadSize {
                expected: self.block_size,
                got: data.len(),
            });
        }
        let h = self.get(key, loader)?;
        bump(&self.stats.writes);
        let mut m = self.lock_entry(h.id);
        self.entry(h.id).payload.write().copy_from_slice(data);
        if !m.dirty {
            m.dirty = true;
            m.dirty_since = self.clock.now_sec();
            self.dirty_entries.fetch_add(1, Ordering::Relaxed);
        }
        drop(m);
        Ok(h)
    }

    fn acquire<F>(&self, key: BlockId, loader: Option<F>) -> Result<Option<CacheHandle<'_>>, CacheError>
    where
        F: FnOnce(BlockId, &mut [u8]) -> Result<(), IoCallbackError>,
    {
        bump(&self.stats.requests);
        let r = self.acquire_inner(key, loader);
        match &r {
            Ok(Some(_)) => {}
            Ok(None) => bump(&self.stats.misses),
            Err(_) => bump(&self.stats.errors),
        }
        r
    }

    fn acquire_inner<F>(&self, key: BlockId, mut loader: Option<F>) -> Result<Option<CacheHandle<'_>>, CacheError>
    where
        F: FnOnce(BlockId, &mut [u8]) -> Result<(), IoCallbackError>,
    {
        let mut retries = 0u32;
        loop {
            if let Some(id) = self.lookup(key) {
                self.sync.hit(SyncPointId::PostBucketUnlock, key);
                let mut m = self.lock_entry(id);
                let mut waited = false;
                while m.key == key && m.state == SlotState::DoingIo {
                    waited = true;
                    self.entry(id).io_done.wait(&mut m);
                }
                if m.key == key {
                    match m.state {
                        SlotState::Resident => {
                            if !self.is_small(id) || !self.in_window(&m) {
                                m.ref_bit = true;
                            }
                            m.pins += 1;
                            bump(&self.stats.hits);
                            if waited {
                                bump(&self.stats.io_waits);
                            }
                            return Ok(Some(CacheHandle { cache: self, id, key }));
                        }
                        SlotState::Failed if waited => return Err(CacheError::PeerLoadFailed(key)),
                        _ => {}
                    }
                }
                drop(m);
                bump(&self.stats.lost_races);
            } else {
                if loader.is_none() {
                    return Ok(None);
                }
                match self.claim_for(key)? {
                    Claim::Loading(id) => {
                        let load = loader.take().expect("loader present");
                        return self.load(key, id, load).map(Some);
                    }
                    Claim::Retry => {}
                }
            }
            retries += 1;
            if retries > self.retry_cap {
                return Err(CacheError::Contention { key, retries });
            }
            backoff(retries);
        }
    }

    fn load<F>(&self, key: BlockId, id: u32, loader: F) -> Result<CacheHandle<'_>, CacheError>
    where
        F: FnOnce(BlockId, &mut [u8]) -> Result<(), IoCallbackError>,
    {
        struct Unwind<'c> {
            cache: &'c ConcurrentCache,
            key: BlockId,
            id: u32,
            armed: bool,
        }
        impl Drop for Unwind<'_> {
            fn drop(&mut self) {
                if self.armed {
                    self.cache.fail_load(self.key, self.id);
                }
            }
        }
        self.sync.hit(SyncPointId::PostIoPublish, key);
        let mut guard = Unwind {
            cache: self,
            key,
            id,
            armed: true,
        };
        let result = {
            let mut payload = self.entry(id).payload.write();
            loader(key, &mut payload)
        };
        guard.armed = false;
        match result {
            Ok(()) => {
                let mut m = self.lock_entry(id);
                m.state = SlotState::Resident;
                drop(m);
                self.entry(id).io_done.notify_all();
                bump(&self.stats.loads);
                bump(&self.stats.misses);
                Ok(CacheHandle { cache: self, id, key })
            }
            Err(source) => {
                self.fail_load(key, id);
                Err(CacheError::Load { key, source })
            }
        }
    }

    fn fail_load(&self, key: BlockId, id: u32) {
        let mut m = self.lock_entry(id);
        self.relink(key, id, NIL);
        m.state = SlotState::Failed;
        m.pins = 0;
        self.occupancy(id).fetch_sub(1, Ordering::Relaxed);
        drop(m);
        self.entry(id).io_done.notify_all();
        bump(&self.stats.load_failures);
    }

    fn occupancy(&self, id: u32) -> &AtomicUsize {
        if self.is_small(id) {
            &self.small_occupied
        } else {
            &self.main_occupied
        }
    }

    /// Miss path: claim a slot, publish it as Doing-I/O and return it locked-free.
    fn claim_for(&self, key: BlockId) -> Result<Claim, CacheError> {
        if self.find_or_migrate(key) {
            return Ok(Claim::Retry);
        }
        let ghost_hit = self.ghost.lock().take(key);
        let (id, mut m) = if ghost_hit {
            bump(&self.stats.ghost_hits);
            self.claim_main()?
        } else {
            self.claim_small()?
        };
        self.sync.hit(SyncPointId::PreInsertLink, key);
        {
            let mut l = self.lock_key(key);
            let (new, old) = (l.new, l.old);
            let exists = self.chain_find(*l.head(new), key).is_some()
                || (old != new && self.chain_find(*l.head(old), key).is_some());
            if exists {
                drop(l);
                m.state = SlotState::Empty;
                bump(&self.stats.abandoned_inserts);
                return Ok(Claim::Retry);
            }
            self.entry(id).key.store(key.0, Ordering::Relaxed);
            self.chain_push(l.head(new), id);
        }
        m.state = SlotState::DoingIo;
        m.key = key;
        m.ref_bit = false;
        m.dirty = false;
        m.pins = 1;
        self.occupancy(id).fetch_add(1, Ordering::Relaxed);
        Ok(Claim::Loading(id))
    }

    /// Whether `key` is indexed; an entry found only at its pre-resize bucket is moved.
    fn find_or_migrate(&self, key: BlockId) -> bool {
        let mut l = self.lock_key(key);
        let (new, old) = (l.new, l.old);
        if self.chain_find(*l.head(new), key).is_some() {
            return true;
        }
        if old == new {
            return false;
        }
        match self.chain_find(*l.head(old), key) {
            Some(id) => {
                self.chain_replace(l.head(old), id, NIL);
                self.chain_push(l.head(new), id);
                bump(&self.stats.migrations);
                true
            }
            None => false,
        }
    }

    /// Claim a free Small FIFO slot, evicting its occupant. Falls back to the Main clock
    /// when too many consecutive candidates are dirty or busy.
    fn claim_small(&self) -> Result<(u32, MutexGuard<'_, Meta>), CacheError> {
        let mut dirty_skips = 0usize;
        let mut busy = 0usize;
        loop {
            let size = self.small_size.load(Ordering::Acquire);
            let c = self.small_counter.fetch_add(1, Ordering::AcqRel);
            let id = (c % size as u64) as u32;
            let mut m = self.lock_entry(id);
            if id as usize >= self.small_size.load(Ordering::Acquire) {
                continue;
            }
            if m.is_free() {
                m.insert_seq = c;
                return Ok((id, m));
            }
            if m.state == SlotState::DoingIo || m.pins > 0 {
                busy += 1;
                if busy > 2 * size {
                    drop(m);
                    return self.claim_main();
                }
                continue;
            }
            let promote = m.ref_bit;
            if m.dirty && !(promote && self.config.dirty_promote) {
                m.insert_seq = c;
                bump(&self.stats.small_dirty_skips);
                dirty_skips += 1;
                if dirty_skips >= self.dirty_scan_cap.load(Ordering::Relaxed) {
                    drop(m);
                    bump(&self.stats.giveups);
                    return self.claim_main();
                }
                continue;
            }
            self.sync.hit(SyncPointId::EvictClaimed, m.key);
            let key = m.key;
            if promote {
                match self.claim_main() {
                    Ok((mid, mut mm)) => {
                        self.entry(mid).payload.write().copy_from_slice(&self.entry(id).payload.read());
                        mm.state = SlotState::Resident;
                        mm.key = key;
                        mm.ref_bit = false;
                        mm.dirty = m.dirty;
                        mm.dirty_since = m.dirty_since;
                        mm.pins = 0;
                        self.relink(key, id, mid);
                        self.main_occupied.fetch_add(1, Ordering::Relaxed);
                        bump(&self.stats.small_to_main);
                    }
                    Err(CacheError::NoEvictableEntry) if m.dirty => {
                        m.insert_seq = c;
                        bump(&self.stats.small_dirty_skips);
                        dirty_skips += 1;
                        if dirty_skips >= self.dirty_scan_cap.load(Ordering::Relaxed) {
                            drop(m);
                            bump(&self.stats.giveups);
                            return self.claim_main();
                        }
                        continue;
                    }
                    Err(CacheError::NoEvictableEntry) => {
                        self.relink(key, id, NIL);
                        bump(&self.stats.small_discards);
                    }
                    Err(e) => return Err(e),
                }
            } else {
                self.relink(key, id, NIL);
                self.ghost.lock().insert(key);
                bump(&self.stats.small_to_ghost);
            }
            self.small_occupied.fetch_sub(1, Ordering::Relaxed);
            m.state = SlotState::Empty;
            m.dirty = false;
            m.ref_bit = false;
            m.insert_seq = c;
            return Ok((id, m));
        }
    }

    /// Claim a free Main clock slot, running the clock hand over busy, dirty and
    /// referenced entries.
    fn claim_main(&self) -> Result<(u32, MutexGuard<'_, Meta>), CacheError> {
        let limit = self.config.reinsertion_limit;
        let mut ref_skips = 0u32;
        let mut scanned = 0usize;
        loop {
            let size = self.main_size.load(Ordering::Acquire);
            if scanned > 3 * size + 8 {
                return Err(CacheError::NoEvictableEntry);
            }
            scanned += 1;
            let h = self.main_hand.fetch_add(1, Ordering::AcqRel);
            let slot = (h % size as u64) as usize;
            let id = (self.small_reserve + slot) as u32;
            let mut m = self.lock_entry(id);
            if slot >= self.main_size.load(Ordering::Acquire) {
                continue;
            }
            if m.is_free() {
                return Ok((id, m));
            }
            if m.state == SlotState::DoingIo || m.pins > 0 {
                continue;
            }
            if m.dirty {
                bump(&self.stats.main_dirty_skips);
                continue;
            }
            if m.ref_bit && limit.map_or(true, |l| ref_skips < l) {
                m.ref_bit = false;
                ref_skips += 1;
                bump(&self.stats.main_ref_skips);
                continue;
            }
            self.sync.hit(SyncPointId::EvictClaimed, m.key);
            self.relink(m.key, id, NIL);
            m.state = SlotState::Empty;
            m.ref_bit = false;
            self.main_occupied.fetch_sub(1, Ordering::Relaxed);
            bump(&self.stats.main_evictions);
            self.stats.max_ref_skips.fetch_max(ref_skips as u64, Ordering::Relaxed);
            return Ok((id, m));
        }
    }

    /// Write dirty blocks to `sink`, oldest first. Flushed blocks stay resident and clean.
    /// The sink must not call back into the cache.
    pub fn flush<S>(&self, policy: FlushPolicy, mut sink: S) -> Result<usize, CacheError>
    where
        S: FnMut(BlockId, &[u8]) -> Result<(), IoCallbackError>,
    {
        let mut scratch = self.flush_scratch.lock();
        scratch.clear();
        let total = self.capacity() as f64;
        let now = self.clock.now_sec();
        let (low, age) = match policy {
            FlushPolicy::All => (0.0, None),
            FlushPolicy::Age(a) => (0.0, Some(a)),
            FlushPolicy::Watermark { low, high } => {
                if self.dirty_count() as f64 <= high * total {
                    return Ok(0);
                }
                (low * total, None)
            }
        };
        for id in 0..self.entries.len() as u32 {
            let m = self.lock_entry(id);
            if m.state == SlotState::Resident && m.dirty && age.map_or(true, |a| now.saturating_sub(m.dirty_since) > a) {
                scratch.push((m.dirty_since, id));
            }
        }
        scratch.sort_unstable();
        let mut flushed = 0;
        for &(_, id) in scratch.iter() {
            if self.dirty_count() as f64 <= low && matches!(policy, FlushPolicy::Watermark { .. }) {
                break;
            }
            let mut m = self.lock_entry(id);
            if !(m.state == SlotState::Resident && m.dirty) {
                continue;
            }
            let payload = self.entry(id).payload.read();
            if let Err(source) = sink(m.key, &payload) {
                self.stats.flushed.fetch_add(flushed as u64, Ordering::Relaxed);
                return Err(CacheError::Flush { flushed, source });
            }
            m.dirty = false;
            self.dirty_entries.fetch_sub(1, Ordering::Relaxed);
            flushed += 1;
        }
        self.stats.flushed.fetch_add(flushed as u64, Ordering::Relaxed);
        Ok(flushed)
    }

    /// Change capacity while the cache stays in use. New sizes are published first; the
    /// calling thread then rehashes the index in batches and, when shrinking, drains the
    /// slots past the new end: clean entries are dropped, dirty ones go to `sink` first,
    /// pinned or loading ones are retried until released.
    pub fn resize<S>(&self, new_total: usize, mut sink: S) -> Result<ResizeReport, CacheError>
    where
        S: FnMut(BlockId, &[u8]) -> Result<(), IoCallbackError>,
    {
        let _guard = self.resize_lock.try_lock().ok_or(CacheError::ResizeBusy)?;
        let from = self.capacity();
        let mut report = ResizeReport {
            from,
            to: new_total,
            ..Default::default()
        };
        if new_total == from {
            return Ok(report);
        }
        if new_total > self.reserve {
            return Err(CacheError::ExceedsReserve {
                requested: new_total,
                reserved: self.reserve,
            });
        }
        let sizes = PolicyConfig {
            total_blocks: new_total,
            ..self.config.clone()
        };
        sizes.validate()?;
        let sizes = sizes.sizes();

        struct Phase<'c>(&'c AtomicBool);
        impl Drop for Phase<'_> {
            fn drop(&mut self) {
                self.0.store(false, Ordering::Release);
            }
        }
        self.resizing.store(true, Ordering::Release);
        let _phase = Phase(&self.resizing);

        let (_, old_n) = self.layout();
        let new_n = 2 * new_total;
        let old_small = self.small_size.load(Ordering::Acquire);
        let old_main = self.main_size.load(Ordering::Acquire);
        self.layout.store(pack(old_n, new_n), Ordering::Release);
        self.small_size.store(sizes.small, Ordering::Release);
        self.main_size.store(sizes.main, Ordering::Release);
        self.window.store(sizes.window, Ordering::Release);
        self.dirty_scan_cap.store(sizes.dirty_scan_cap, Ordering::Release);
        self.total.store(new_total, Ordering::Release);
        self.ghost.lock().resize(sizes.ghost);

        report.rehashed = self.rehash(old_n, new_n);
        self.layout.store(pack(new_n, new_n), Ordering::Release);

        let tail = (sizes.small..old_small).chain(self.small_reserve + sizes.main..self.small_reserve + old_main);
        let tail: Vec<u32> = tail.map(|i| i as u32).collect();
        let mut pending = tail;
        while !pending.is_empty() {
            let mut i = 0;
            while i < pending.len() {
                let id = pending[i];
                let mut m = self.lock_entry(id);
                let done = match m.state {
                    SlotState::Empty | SlotState::Failed => true,
                    SlotState::DoingIo => false,
                    SlotState::Resident if m.pins > 0 => false,
                    SlotState::Resident => {
                        if m.dirty {
                            let payload = self.entry(id).payload.read();
                            sink(m.key, &payload).map_err(|source| CacheError::Flush {
                                flushed: report.flushed,
                                source,
                            })?;
                            drop(payload);
                            m.dirty = false;
                            self.dirty_entries.fetch_sub(1, Ordering::Relaxed);
                            report.flushed += 1;
                        }
                        self.relink(m.key, id, NIL);
                        m.state = SlotState::Empty;
                        m.ref_bit = false;
                        self.occupancy(id).fetch_sub(1, Ordering::Relaxed);
                        report.discarded += 1;
                        true
                    }
                };
                drop(m);
                if done {
                    pending.swap_remove(i);
                } else {
                    i += 1;
                }
            }
            if !pending.is_empty() {
                thread::sleep(Duration::from_micros(200));
            }
        }
        Ok(report)
    }

    /// Run [`resize`](Self::resize) on a new thread.
    pub fn resize_in_background<S>(
        self: &Arc<Self>,
        new_total: usize,
        sink: S,
    ) -> thread::JoinHandle<Result<ResizeReport, CacheError>>
    where
        S: FnMut(BlockId, &[u8]) -> Result<(), IoCallbackError> + Send + 'static,
    {
        let cache = Arc::clone(self);
        thread::spawn(move || cache.resize(new_total, sink))
    }

    /// Move every entry in buckets `0..old_n` whose location under `new_n` differs.
    fn rehash(&self, old_n: usize, new_n: usize) -> usize {
        let mut moved = 0;
        let mut batch = 0;
        for b in 0..old_n {
            loop {
                let candidate = {
                    let g = self.lock_bucket(b);
                    batch += 1;
                    let mut cur = *g.head;
                    let mut found = None;
                    while cur != NIL {
                        let e = self.entry(cur);
                        let key = BlockId(e.key.load(Ordering::Relaxed));
                        let dest = bucket_of(key, new_n);
                        if dest != b {
                            found = Some((cur, key, dest));
                            break;
                        }
                        cur = e.next.load(Ordering::Relaxed);
                    }
                    found
                };
                let Some((id, key, dest)) = candidate else { break };
                let mut pair = Locked {
                    new: dest,
                    old: b,
                    guards: self.lock_pair(dest, b),
                };
                let still_there = self.chain_contains(*pair.head(b), id)
                    && self.entry(id).key.load(Ordering::Relaxed) == key.0;
                if still_there {
                    self.chain_replace(pair.head(b), id, NIL);
                    self.chain_push(pair.head(dest), id);
                    moved += 1;
                }
                batch += 1;
            }
            if batch >= REHASH_BATCH {
                batch = 0;
                self.sync.hit(SyncPointId::ResizeRehashBatch, BlockId(b as u64));
                thread::yield_now();
            }
        }
        moved
    }

    /// Walk the whole index and every slot. Meant for quiescent points; concurrent
    /// activity can produce spurious reports.
    pub fn check_invariants(&self) -> InvariantReport {
        let mut report = InvariantReport::default();
        let (o, n) = self.layout();
        let mut linked: Vec<(usize, u32, BlockId)> = Vec::new();
        for b in 0..self.buckets.len() {
            let g = self.lock_bucket(b);
            let mut cur = *g.head;
            let mut steps = 0;
            while cur != NIL {
                let e = self.entry(cur);
                linked.push((b, cur, BlockId(e.key.load(Ordering::Relaxed))));
                cur = e.next.load(Ordering::Relaxed);
                steps += 1;
                if steps > self.entries.len() {
                    report.violations.push(format!("cycle in bucket {b}"));
                    break;
                }
            }
        }
        report.linked = linked.len();
        let mut keys: Vec<BlockId> = linked.iter().map(|&(_, _, k)| k).collect();
        keys.sort_unstable();
        for w in keys.windows(2) {
            if w[0] == w[1] {
                report.violations.push(format!("block {} linked twice", w[0]));
            }
        }
        let mut ids: Vec<u32> = linked.iter().map(|&(_, id, _)| id).collect();
        ids.sort_unstable();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                report.violations.push(format!("slot {} linked twice", w[0]));
            }
        }
        for &(b, id, key) in &linked {
            if b != bucket_of(key, n) && b != bucket_of(key, o) {
                report.violations.push(format!("block {key} in bucket {b}, expected {}", bucket_of(key, n)));
            }
            let m = self.lock_entry(id);
            if m.key != key || !matches!(m.state, SlotState::Resident | SlotState::DoingIo) {
                report.violations.push(format!("slot {id} linked as {key} but holds {:?} {}", m.state, m.key));
            }
        }
        let (small, main) = (self.small_size.load(Ordering::Acquire), self.main_size.load(Ordering::Acquire));
        let (mut small_live, mut main_live, mut dirty) = (0, 0, 0);
        for id in 0..self.entries.len() as u32 {
            let m = self.lock_entry(id);
            let live = matches!(m.state, SlotState::Resident | SlotState::DoingIo);
            if !live {
                continue;
            }
            match m.state {
                SlotState::Resident => report.resident += 1,
                _ => report.loading += 1,
            }
            dirty += m.dirty as usize;
            report.pinned += (m.pins > 0) as usize;
            let in_range = if self.is_small(id) {
                small_live += 1;
                (id as usize) < small
            } else {
                main_live += 1;
                (id as usize - self.small_reserve) < main
            };
            if !in_range && !self.is_resizing() {
                report.violations.push(format!("slot {id} live beyond the current capacity"));
            }
            if ids.binary_search(&id).is_err() {
                report.violations.push(format!("slot {id} ({}) live but not indexed", m.key));
            }
        }
        report.dirty = dirty;
        if small_live != self.small_occupied.load(Ordering::Relaxed) || main_live != self.main_occupied.load(Ordering::Relaxed) {
            report.violations.push(format!(
                "occupancy counters {}/{} but found {small_live}/{main_live}",
                self.small_occupied.load(Ordering::Relaxed),
                self.main_occupied.load(Ordering::Relaxed)
            ));
        }
        if !self.is_resizing() && small_live + main_live > self.capacity() {
            report.violations.push(format!("{} live entries exceed capacity {}", small_live + main_live, self.capacity()));
        }
        if dirty != self.dirty_count() {
            report.violations.push(format!("dirty counter {} but {dirty} dirty entries", self.dirty_count()));
        }
        let s = self.stats();
        if s.hits + s.misses + s.errors > s.requests {
            report.violations.push(format!(
                "hits {} + misses {} + errors {} exceed requests {}",
                s.hits, s.misses, s.errors, s.requests
            ));
        }
        report
    }

    /// Human-readable state summary.
    pub fn diagnostics(&self) -> String {
        let s = self.stats();
        let (o, n) = self.layout();
        let mut out = String::new();
        let cap = self.capacity();
        let _ = writeln!(out, "capacity {cap} (reserve {}), block size {}", self.reserve, self.block_size);
        let _ = writeln!(
            out,
            "small {}/{} window {}, main {}/{}, ghost {}",
            self.small_occupied.load(Ordering::Relaxed),
            self.small_size.load(Ordering::Relaxed),
            self.window.load(Ordering::Relaxed),
            self.main_occupied.load(Ordering::Relaxed),
            self.main_size.load(Ordering::Relaxed),
            self.ghost.lock().len()
        );
        let _ = writeln!(
            out,
            "dirty {} ({:.3} of capacity)",
            self.dirty_count(),
            self.dirty_count() as f64 / cap as f64
        );
        let phase = if self.is_resizing() {
            format!("resizing, buckets {o} -> {n}")
        } else {
            format!("stable, {n} buckets")
        };
        let _ = writeln!(out, "resize: {phase}");
        let _ = writeln!(out, "{s:?}");
        out
    }
}
