//! Single-threaded cache replacement policies.
//!
//! All eight policies share one state machine: a Small FIFO, a Main queue (clock, FIFO or
//! LRU) and a Ghost FIFO of keys. The single-queue policies (LRU, FIFO, CLOCK) simply run
//! with an empty Small FIFO and no ghost.
//!
//! The Small FIFO's correlation window is measured in insertions: a resident block is in
//! the window while fewer than `window` blocks have been inserted (or reinserted by a
//! dirty skip) after it. Hits inside the window leave the ref bit alone, so a burst of
//! correlated references does not make a block look hot.

mod config;
mod queues;

use rustc_hash::FxHashMap;
use serde::Serialize;
use smallvec::SmallVec;

pub(crate) use self::config::round_half_up;
pub use self::config::{MainDiscipline, PolicyConfig, PolicyKind, QueueSizes, DEFAULT_DIRTY_SCAN_CAP};
pub use self::queues::EntryMeta;
pub(crate) use self::queues::GhostFifo;

use self::queues::{ClockQueue, LruQueue, MainQueue, SmallFifo};
use crate::error::{ConfigError, PolicyError};
use crate::BlockId;

/// How a single access was served.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum AccessKind {
    HitMain,
    HitSmallInWindow,
    HitSmallOutWindow,
    MissGhostHit,
    MissCold,
}

impl AccessKind {
    pub fn is_hit(self) -> bool {
        matches!(
            self,
            AccessKind::HitMain | AccessKind::HitSmallInWindow | AccessKind::HitSmallOutWindow
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum QueueId {
    Small,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Destination {
    /// Promoted from the Small FIFO into the Main queue.
    Main,
    /// Key recorded in the Ghost FIFO, data dropped.
    Ghost,
    /// Dropped outright.
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvictionEvent {
    pub key: BlockId,
    pub source: QueueId,
    pub destination: Destination,
    pub skipped_ref: u32,
    pub skipped_dirty: u32,
}

/// The Small FIFO scan hit `dirty_scan_cap` dirty entries without finding a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GiveUp {
    pub skipped_dirty: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessOutcome {
    pub kind: AccessKind,
    /// Evictions in the order they were decided.
    pub evictions: SmallVec<[EvictionEvent; 2]>,
    pub gave_up: Option<GiveUp>,
    /// False when the block could not be cached because every Main entry was dirty.
    pub admitted: bool,
}

impl AccessOutcome {
    fn new(kind: AccessKind) -> Self {
        AccessOutcome {
            kind,
            evictions: SmallVec::new(),
            gave_up: None,
            admitted: true,
        }
    }

    pub fn is_hit(&self) -> bool {
        self.kind.is_hit()
    }
}

/// Result of a standalone Small FIFO eviction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmallEviction {
    Evicted {
        event: EvictionEvent,
        /// Main queue eviction made to room for a promotion.
        displaced: Option<EvictionEvent>,
    },
    GaveUp(GiveUp),
}

/// Ordered view of every queue, for tests and diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueueSnapshot {
    /// Oldest first.
    pub small: Vec<SnapshotEntry>,
    /// Number of leading `small` entries that are outside the correlation window.
    pub window_boundary: usize,
    /// Clock order starting at the hand, or most-recent first for LRU.
    pub main: Vec<SnapshotEntry>,
    pub hand: Option<usize>,
    /// Oldest first.
    pub ghost: Vec<BlockId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SnapshotEntry {
    pub key: BlockId,
    pub slot: usize,
    pub ref_or_freq: u8,
    pub dirty: bool,
}

impl From<(usize, &EntryMeta)> for SnapshotEntry {
    fn from((slot, m): (usize, &EntryMeta)) -> Self {
        SnapshotEntry {
            key: m.key,
            slot,
            ref_or_freq: m.ref_or_freq,
            dirty: m.dirty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Location {
    Small(u32),
    Main(u32),
}

enum SmallOutcome {
    Freed,
    GaveUp(GiveUp),
}

/// A deterministic replacement-policy state machine.
#[derive(Debug, Clone)]
pub struct PolicyState {
    kind: PolicyKind,
    config: PolicyConfig,
    sizes: QueueSizes,
    promote_threshold: u8,
    freq_max: u8,
    small: SmallFifo,
    main: MainQueue,
    ghost: GhostFifo,
    index: FxHashMap<BlockId, Location>,
}

impl PolicyState {
    pub fn new(kind: PolicyKind, config: PolicyConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut config = config;
        if !kind.is_three_queue() {
            config.small_frac = 0.0;
            config.ghost_frac = 0.0;
        }
        if kind.is_three_queue() && config.small_frac == 0.0 {
            return Err(ConfigError::InvalidField {
                field: "small_frac",
                reason: format!("{kind} needs a non-empty Small FIFO"),
            });
        }
        if !kind.promotes_from_small() {
            // Without promotion the Small FIFO never reads its ref bits, so the whole
            // queue acts as the window.
            config.window_frac = 1.0;
        }
        let mut sizes = config.sizes();
        if !kind.promotes_from_small() {
            sizes.window = sizes.small;
        }
        let main = match kind.main_discipline() {
            MainDiscipline::Lru => MainQueue::Lru(LruQueue::new(sizes.main)),
            MainDiscipline::Clock => {
                MainQueue::Clock(ClockQueue::new(sizes.main, true, config.reinsertion_limit))
            }
            MainDiscipline::Fifo => {
                MainQueue::Clock(ClockQueue::new(sizes.main, false, config.reinsertion_limit))
            }
        };
        let freq_max = ((1u16 << config.freq_bits) - 1) as u8;
        let mut index = FxHashMap::default();
        index.reserve(sizes.total);
        Ok(PolicyState {
            kind,
            promote_threshold: if config.freq_bits == 2 { 2 } else { 1 },
            freq_max,
            small: SmallFifo::new(sizes.small, sizes.window),
            main,
            ghost: GhostFifo::new(sizes.ghost),
            index,
            sizes,
            config,
        })
    }

    /// Build a policy with the kind's default fractions.
    pub fn with_defaults(kind: PolicyKind, total_blocks: usize) -> Result<Self, ConfigError> {
        Self::new(kind, PolicyConfig::for_kind(kind, total_blocks))
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn sizes(&self) -> QueueSizes {
        self.sizes
    }

    pub fn resident_count(&self) -> usize {
        self.small.occupancy + self.main.occupancy()
    }

    pub fn small_occupancy(&self) -> usize {
        self.small.occupancy
    }

    pub fn main_occupancy(&self) -> usize {
        self.main.occupancy()
    }

    pub fn dirty_count(&self) -> usize {
        self.small.dirty + self.main.dirty()
    }

    pub fn ghost_len(&self) -> usize {
        self.ghost.len()
    }

    pub fn contains(&self, key: BlockId) -> bool {
        self.index.contains_key(&key)
    }

    pub fn in_ghost(&self, key: BlockId) -> bool {
        self.ghost.contains(key)
    }

    pub fn is_dirty(&self, key: BlockId) -> bool {
        self.meta(key).is_some_and(|m| m.dirty)
    }

    pub fn meta(&self, key: BlockId) -> Option<&EntryMeta> {
        match *self.index.get(&key)? {
            Location::Small(s) => Some(&self.small.slots[s as usize]),
            Location::Main(s) => Some(self.main.slot(s as usize)),
        }
    }

    /// Serve one request.
    pub fn access(&mut self, key: BlockId, is_write: bool) -> AccessOutcome {
        if let Some(&loc) = self.index.get(&key) {
            return self.hit(loc, is_write);
        }

        if self.kind.is_three_queue() && self.ghost.take(key) {
            let mut outcome = AccessOutcome::new(AccessKind::MissGhostHit);
            outcome.admitted = self.insert_main(key, is_write, &mut outcome.evictions);
            return outcome;
        }

        let mut outcome = AccessOutcome::new(AccessKind::MissCold);
        if self.small.capacity() == 0 {
            outcome.admitted = self.insert_main(key, is_write, &mut outcome.evictions);
            return outcome;
        }
        if self.small.is_full() {
            if let SmallOutcome::GaveUp(g) = self.evict_small_into(&mut outcome.evictions) {
                outcome.gave_up = Some(g);
                outcome.admitted = self.insert_main(key, is_write, &mut outcome.evictions);
                return outcome;
            }
        }
        let slot = self.small.insert(key, is_write);
        self.index.insert(key, Location::Small(slot as u32));
        outcome
    }

    fn hit(&mut self, loc: Location, is_write: bool) -> AccessOutcome {
        match loc {
            Location::Main(s) => {
                let s = s as usize;
                self.main.hit(s);
                if is_write {
                    self.main.set_dirty(s, true);
                }
                AccessOutcome::new(AccessKind::HitMain)
            }
            Location::Small(s) => {
                let s = s as usize;
                let in_window = self.small.in_window(s);
                let entry = &mut self.small.slots[s];
                if !in_window {
                    entry.ref_or_freq = (entry.ref_or_freq + 1).min(self.freq_max);
                }
                if is_write && !entry.dirty {
                    entry.dirty = true;
                    self.small.dirty += 1;
                }
                AccessOutcome::new(if in_window {
                    AccessKind::HitSmallInWindow
                } else {
                    AccessKind::HitSmallOutWindow
                })
            }
        }
    }

    /// Insert into the Main queue, evicting first when full. Returns false when every Main
    /// entry is dirty and the block cannot be cached.
    fn insert_main(
        &mut self,
        key: BlockId,
        dirty: bool,
        events: &mut SmallVec<[EvictionEvent; 2]>,
    ) -> bool {
        if self.main.is_full() {
            match self.evict_main() {
                Ok(ev) => events.push(ev),
                Err(_) => return false,
            }
        }
        let slot = self.main.insert(key, dirty);
        self.index.insert(key, Location::Main(slot as u32));
        true
    }

    fn promotable(&self, meta: &EntryMeta) -> bool {
        self.kind.promotes_from_small() && meta.ref_or_freq >= self.promote_threshold
    }

    fn evict_small_into(&mut self, events: &mut SmallVec<[EvictionEvent; 2]>) -> SmallOutcome {
        let mut skipped_dirty = 0u32;
        loop {
            let slot = self.small.next;
            let meta = self.small.slots[slot];
            debug_assert!(meta.present);
            let promotable = self.promotable(&meta);
            if meta.dirty && !(self.config.dirty_promote && promotable && self.main.can_accept()) {
                self.small.skip();
                skipped_dirty += 1;
                if skipped_dirty as usize >= self.sizes.dirty_scan_cap {
                    return SmallOutcome::GaveUp(GiveUp { skipped_dirty });
                }
                continue;
            }

            let meta = self.small.remove_at(slot);
            self.index.remove(&meta.key);
            let mut event = EvictionEvent {
                key: meta.key,
                source: QueueId::Small,
                destination: Destination::Ghost,
                skipped_ref: 0,
                skipped_dirty,
            };
            if promotable {
                if self.main.can_accept() {
                    event.destination = Destination::Main;
                    events.push(event);
                    let admitted = self.insert_main(meta.key, meta.dirty, events);
                    debug_assert!(admitted);
                } else {
                    debug_assert!(!meta.dirty);
                    event.destination = Destination::Discard;
                    events.push(event);
                }
            } else {
                self.ghost.insert(meta.key);
                events.push(event);
            }
            return SmallOutcome::Freed;
        }
    }

    /// Evict from the full Small FIFO, leaving a free slot under its index for the next
    /// insertion.
    pub fn evict_small(&mut self) -> Result<SmallEviction, PolicyError> {
        if self.small.capacity() == 0 || !self.small.is_full() {
            return Err(PolicyError::SmallNotFull);
        }
        let mut events = SmallVec::new();
        Ok(match self.evict_small_into(&mut events) {
            SmallOutcome::GaveUp(g) => SmallEviction::GaveUp(g),
            SmallOutcome::Freed => SmallEviction::Evicted {
                event: events[0],
                displaced: events.get(1).copied(),
            },
        })
    }

    /// Evict one block from the full Main queue. Main evictions are discarded.
    pub fn evict_main(&mut self) -> Result<EvictionEvent, PolicyError> {
        let ev = self.main.evict()?;
        self.index.remove(&ev.meta.key);
        Ok(EvictionEvent {
            key: ev.meta.key,
            source: QueueId::Main,
            destination: Destination::Discard,
            skipped_ref: ev.skipped_ref,
            skipped_dirty: ev.skipped_dirty,
        })
    }

    /// Clear the dirty flag of a resident block. Returns whether it was dirty.
    pub fn flush_block(&mut self, key: BlockId) -> bool {
        match self.index.get(&key) {
            Some(&Location::Small(s)) => {
                let e = &mut self.small.slots[s as usize];
                if e.dirty {
                    e.dirty = false;
                    self.small.dirty -= 1;
                    true
                } else {
                    false
                }
            }
            Some(&Location::Main(s)) => {
                let s = s as usize;
                let was = self.main.slot(s).dirty;
                self.main.set_dirty(s, false);
                was
            }
            None => false,
        }
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        let small: Vec<SnapshotEntry> = if self.small.capacity() == 0 {
            Vec::new()
        } else {
            self.small.ordered().map(SnapshotEntry::from).collect()
        };
        let window_boundary = small
            .iter()
            .take_while(|e| !self.small.in_window(e.slot))
            .count();
        QueueSnapshot {
            small,
            window_boundary,
            main: self.main.ordered().map(SnapshotEntry::from).collect(),
            hand: self.main.hand(),
            ghost: self.ghost.ordered().collect(),
        }
    }

    /// Verify the structural invariants; used by tests and the stress tooling.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = 0usize;
        let mut dirty = 0usize;
        for (slot, m) in self.small.ordered() {
            seen += 1;
            dirty += m.dirty as usize;
            if self.index.get(&m.key) != Some(&Location::Small(slot as u32)) {
                return Err(format!("small slot {slot} ({}) not indexed", m.key));
            }
            if self.ghost.contains(m.key) {
                return Err(format!("{} resident and in ghost", m.key));
            }
            if m.ref_or_freq > self.freq_max {
                return Err(format!("{} counter {} above max", m.key, m.ref_or_freq));
            }
        }
        for (slot, m) in self.main.ordered() {
            seen += 1;
            dirty += m.dirty as usize;
            if self.index.get(&m.key) != Some(&Location::Main(slot as u32)) {
                return Err(format!("main slot {slot} ({}) not indexed", m.key));
            }
            if self.ghost.contains(m.key) {
                return Err(format!("{} resident and in ghost", m.key));
            }
        }
        if seen != self.index.len() || seen != self.resident_count() {
            return Err(format!(
                "index holds {} keys, queues hold {seen}, counters say {}",
                self.index.len(),
                self.resident_count()
            ));
        }
        if seen > self.sizes.total {
            return Err(format!("{seen} residents exceed {} blocks", self.sizes.total));
        }
        if dirty != self.dirty_count() {
            return Err(format!("dirty counter {} but {dirty} dirty entries", self.dirty_count()));
        }
        if self.ghost.len() > self.ghost.capacity() {
            return Err("ghost over capacity".into());
        }
        Ok(())
    }
}
