//! Flat-array queue structures backing [`PolicyState`](super::PolicyState).
//!
//! Every queue is a fixed array allocated once. The Small FIFO, the Main clock and the
//! Ghost FIFO each use a single rotating index as both head and tail: the slot under the
//! index is the oldest entry (the next eviction candidate), the slot just behind it is the
//! newest. Evicting leaves a hole under the index, and the next insertion fills it.

use rustc_hash::FxHashMap;

use crate::error::PolicyError;
use crate::BlockId;

/// Per-entry replacement metadata.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EntryMeta {
    pub key: BlockId,
    pub present: bool,
    /// Ref bit, or a saturating 2-bit frequency counter in the S3-FIFO 2-bit Small FIFO.
    pub ref_or_freq: u8,
    pub dirty: bool,
}

impl EntryMeta {
    fn new(key: BlockId, dirty: bool) -> Self {
        EntryMeta {
            key,
            present: true,
            ref_or_freq: 0,
            dirty,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SmallFifo {
    pub(crate) slots: Vec<EntryMeta>,
    pub(crate) next: usize,
    pub(crate) occupancy: usize,
    pub(crate) window: usize,
    pub(crate) dirty: usize,
}

impl SmallFifo {
    pub(crate) fn new(size: usize, window: usize) -> Self {
        SmallFifo {
            slots: vec![EntryMeta::default(); size],
            next: 0,
            occupancy: 0,
            window,
            dirty: 0,
        }
    }

    pub(crate) fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub(crate) fn is_full(&self) -> bool {
        self.occupancy == self.slots.len()
    }

    /// Number of insertions (or dirty-skip reinsertions) made since `slot` was placed.
    pub(crate) fn distance_from_head(&self, slot: usize) -> usize {
        let n = self.slots.len();
        (self.next + n - 1 - slot) % n
    }

    pub(crate) fn in_window(&self, slot: usize) -> bool {
        self.distance_from_head(slot) < self.window
    }

    pub(crate) fn insert(&mut self, key: BlockId, dirty: bool) -> usize {
        let slot = self.next;
        debug_assert!(!self.slots[slot].present, "small insert over a live slot");
        self.slots[slot] = EntryMeta::new(key, dirty);
        self.next = (slot + 1) % self.slots.len();
        self.occupancy += 1;
        self.dirty += dirty as usize;
        slot
    }

    /// Pass over the entry under the index; equivalent to reinserting it at the head.
    pub(crate) fn skip(&mut self) {
        self.next = (self.next + 1) % self.slots.len();
    }

    pub(crate) fn remove_at(&mut self, slot: usize) -> EntryMeta {
        let meta = std::mem::take(&mut self.slots[slot]);
        debug_assert!(meta.present);
        self.occupancy -= 1;
        self.dirty -= meta.dirty as usize;
        meta
    }

    /// Live entries from oldest to newest.
    pub(crate) fn ordered(&self) -> impl Iterator<Item = (usize, &EntryMeta)> + '_ {
        let n = self.slots.len();
        (0..n)
            .map(move |i| (self.next + i) % n)
            .map(move |s| (s, &self.slots[s]))
            .filter(|(_, m)| m.present)
    }
}

/// Eviction bookkeeping returned by the Main queue.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MainEvicted {
    pub(crate) meta: EntryMeta,
    pub(crate) skipped_ref: u32,
    pub(crate) skipped_dirty: u32,
}

#[derive(Debug, Clone)]
pub(crate) struct ClockQueue {
    pub(crate) slots: Vec<EntryMeta>,
    pub(crate) hand: usize,
    pub(crate) occupancy: usize,
    pub(crate) dirty: usize,
    set_ref_on_hit: bool,
    reinsertion_limit: Option<u32>,
}

impl ClockQueue {
    pub(crate) fn new(size: usize, set_ref_on_hit: bool, reinsertion_limit: Option<u32>) -> Self {
        ClockQueue {
            slots: vec![EntryMeta::default(); size],
            hand: 0,
            occupancy: 0,
            dirty: 0,
            set_ref_on_hit,
            reinsertion_limit,
        }
    }

    pub(crate) fn insert(&mut self, key: BlockId, dirty: bool) -> usize {
        let slot = self.hand;
        debug_assert!(!self.slots[slot].present, "clock insert over a live slot");
        self.slots[slot] = EntryMeta::new(key, dirty);
        self.hand = (slot + 1) % self.slots.len();
        self.occupancy += 1;
        self.dirty += dirty as usize;
        slot
    }

    pub(crate) fn hit(&mut self, slot: usize) {
        if self.set_ref_on_hit {
            self.slots[slot].ref_or_freq = 1;
        }
    }

    pub(crate) fn evict(&mut self) -> Result<MainEvicted, PolicyError> {
        let n = self.slots.len();
        if self.occupancy < n {
            return Err(PolicyError::MainNotFull);
        }
        if self.dirty == self.occupancy {
            return Err(PolicyError::EvictionImpossible);
        }
        let mut skipped_ref = 0u32;
        let mut skipped_dirty = 0u32;
        loop {
            let entry = &mut self.slots[self.hand];
            if entry.dirty {
                skipped_dirty += 1;
            } else if entry.ref_or_freq > 0
                && self.reinsertion_limit.map_or(true, |limit| skipped_ref < limit)
            {
                entry.ref_or_freq = 0;
                skipped_ref += 1;
            } else {
                let meta = std::mem::take(entry);
                self.occupancy -= 1;
                return Ok(MainEvicted {
                    meta,
                    skipped_ref,
                    skipped_dirty,
                });
            }
            self.hand = (self.hand + 1) % n;
        }
    }

    /// Live entries in hand order (next candidate first).
    pub(crate) fn ordered(&self) -> impl Iterator<Item = (usize, &EntryMeta)> + '_ {
        let n = self.slots.len();
        (0..n)
            .map(move |i| (self.hand + i) % n)
            .map(move |s| (s, &self.slots[s]))
            .filter(|(_, m)| m.present)
    }
}

const NIL: u32 = u32::MAX;

/// Recency list over a slot array. `head` is the most recently used entry.
#[derive(Debug, Clone)]
pub(crate) struct LruQueue {
    pub(crate) slots: Vec<EntryMeta>,
    prev: Vec<u32>,
    next: Vec<u32>,
    head: u32,
    tail: u32,
    free: Vec<u32>,
    pub(crate) occupancy: usize,
    pub(crate) dirty: usize,
}

impl LruQueue {
    pub(crate) fn new(size: usize) -> Self {
        LruQueue {
            slots: vec![EntryMeta::default(); size],
            prev: vec![NIL; size],
            next: vec![NIL; size],
            head: NIL,
            tail: NIL,
            free: (0..size as u32).rev().collect(),
            occupancy: 0,
            dirty: 0,
        }
    }

    fn unlink(&mut self, s: u32) {
        let (p, n) = (self.prev[s as usize], self.next[s as usize]);
        if p == NIL {
            self.head = n;
        } else {
            self.next[p as usize] = n;
        }
        if n == NIL {
            self.tail = p;
        } else {
            self.prev[n as usize] = p;
        }
        self.prev[s as usize] = NIL;
        self.next[s as usize] = NIL;
    }

    fn push_head(&mut self, s: u32) {
        self.prev[s as usize] = NIL;
        self.next[s as usize] = self.head;
        if self.head != NIL {
            self.prev[self.head as usize] = s;
        }
        self.head = s;
        if self.tail == NIL {
            self.tail = s;
        }
    }

    pub(crate) fn insert(&mut self, key: BlockId, dirty: bool) -> usize {
        let s = self.free.pop().expect("lru insert into a full queue");
        self.slots[s as usize] = EntryMeta::new(key, dirty);
        self.push_head(s);
        self.occupancy += 1;
        self.dirty += dirty as usize;
        s as usize
    }

    pub(crate) fn hit(&mut self, slot: usize) {
        let s = slot as u32;
        if self.head != s {
            self.unlink(s);
            self.push_head(s);
        }
    }

    pub(crate) fn evict(&mut self) -> Result<MainEvicted, PolicyError> {
        if self.occupancy < self.slots.len() {
            return Err(PolicyError::MainNotFull);
        }
        if self.dirty == self.occupancy {
            return Err(PolicyError::EvictionImpossible);
        }
        let mut skipped_dirty = 0u32;
        let mut s = self.tail;
        while self.slots[s as usize].dirty {
            skipped_dirty += 1;
            s = self.prev[s as usize];
        }
        self.unlink(s);
        self.free.push(s);
        self.occupancy -= 1;
        let meta = std::mem::take(&mut self.slots[s as usize]);
        Ok(MainEvicted {
            meta,
            skipped_ref: 0,
            skipped_dirty,
        })
    }

    /// Live entries from most to least recently used.
    pub(crate) fn ordered(&self) -> impl Iterator<Item = (usize, &EntryMeta)> + '_ {
        let mut cur = self.head;
        std::iter::from_fn(move || {
            if cur == NIL {
                return None;
            }
            let s = cur as usize;
            cur = self.next[s];
            Some((s, &self.slots[s]))
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) enum MainQueue {
    Clock(ClockQueue),
    Lru(LruQueue),
}

impl MainQueue {
    pub(crate) fn capacity(&self) -> usize {
        match self {
            MainQueue::Clock(q) => q.slots.len(),
            MainQueue::Lru(q) => q.slots.len(),
        }
    }

    pub(crate) fn occupancy(&self) -> usize {
        match self {
            MainQueue::Clock(q) => q.occupancy,
            MainQueue::Lru(q) => q.occupancy,
        }
    }

    pub(crate) fn dirty(&self) -> usize {
        match self {
            MainQueue::Clock(q) => q.dirty,
            MainQueue::Lru(q) => q.dirty,
        }
    }

    pub(crate) fn is_full(&self) -> bool {
        self.occupancy() == self.capacity()
    }

    /// Whether an insertion can succeed, evicting first if needed.
    pub(crate) fn can_accept(&self) -> bool {
        !self.is_full() || self.dirty() < self.occupancy()
    }

    pub(crate) fn slot(&self, slot: usize) -> &EntryMeta {
        match self {
            MainQueue::Clock(q) => &q.slots[slot],
            MainQueue::Lru(q) => &q.slots[slot],
        }
    }

    pub(crate) fn set_dirty(&mut self, slot: usize, dirty: bool) {
        let (slots, count) = match self {
            MainQueue::Clock(q) => (&mut q.slots, &mut q.dirty),
            MainQueue::Lru(q) => (&mut q.slots, &mut q.dirty),
        };
        let e = &mut slots[slot];
        if e.dirty != dirty {
            e.dirty = dirty;
            if dirty {
                *count += 1;
            } else {
                *count -= 1;
            }
        }
    }

    pub(crate) fn insert(&mut self, key: BlockId, dirty: bool) -> usize {
        match self {
            MainQueue::Clock(q) => q.insert(key, dirty),
            MainQueue::Lru(q) => q.insert(key, dirty),
        }
    }

    pub(crate) fn hit(&mut self, slot: usize) {
        match self {
            MainQueue::Clock(q) => q.hit(slot),
            MainQueue::Lru(q) => q.hit(slot),
        }
    }

    pub(crate) fn evict(&mut self) -> Result<MainEvicted, PolicyError> {
        let evicted = match self {
            MainQueue::Clock(q) => q.evict(),
            MainQueue::Lru(q) => q.evict(),
        }?;
        debug_assert!(!evicted.meta.dirty);
        Ok(evicted)
    }

    pub(crate) fn ordered(&self) -> Box<dyn Iterator<Item = (usize, &EntryMeta)> + '_> {
        match self {
            MainQueue::Clock(q) => Box::new(q.ordered()),
            MainQueue::Lru(q) => Box::new(q.ordered()),
        }
    }

    pub(crate) fn hand(&self) -> Option<usize> {
        match self {
            MainQueue::Clock(q) => Some(q.hand),
            MainQueue::Lru(_) => None,
        }
    }
}

/// Key-only FIFO of recently evicted Small FIFO blocks.
///
/// A ghost hit clears the slot in place; the tombstone is overwritten when the index
/// comes around again.
#[derive(Debug, Clone)]
pub(crate) struct GhostFifo {
    keys: Vec<Option<BlockId>>,
    next: usize,
    members: FxHashMap<BlockId, u32>,
}

impl GhostFifo {
    pub(crate) fn new(size: usize) -> Self {
        // Room for twice the live keys: removals leave tombstones, and at this load the
        // table always rehashes in place instead of growing.
        let mut members = FxHashMap::default();
        members.reserve(2 * size + 1);
        GhostFifo {
            keys: vec![None; size],
            next: 0,
            members,
        }
    }

    pub(crate) fn capacity(&self) -> usize {
        self.keys.len()
    }

    pub(crate) fn len(&self) -> usize {
        self.members.len()
    }

    pub(crate) fn contains(&self, key: BlockId) -> bool {
        self.members.contains_key(&key)
    }

    pub(crate) fn insert(&mut self, key: BlockId) {
        if self.keys.is_empty() {
            return;
        }
        let slot = self.next;
        if let Some(old) = self.keys[slot].replace(key) {
            self.members.remove(&old);
        }
        self.members.insert(key, slot as u32);
        self.next = (slot + 1) % self.keys.len();
    }

    pub(crate) fn take(&mut self, key: BlockId) -> bool {
        match self.members.remove(&key) {
            Some(slot) => {
                self.keys[slot as usize] = None;
                true
            }
            None => false,
        }
    }

    /// Stored keys from oldest to newest.
    pub(crate) fn ordered(&self) -> impl Iterator<Item = BlockId> + '_ {
        let n = self.keys.len();
        (0..n).filter_map(move |i| self.keys[(self.next + i) % n])
    }

    /// Rebuild with a new capacity, keeping the newest keys.
    pub(crate) fn resize(&mut self, size: usize) {
        let keys: Vec<BlockId> = self.ordered().collect();
        let mut fresh = GhostFifo::new(size);
        for &k in &keys[keys.len().saturating_sub(size)..] {
            fresh.insert(k);
        }
        *self = fresh;
    }
}
