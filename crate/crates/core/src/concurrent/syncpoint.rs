//! Named pause points for forcing specific thread interleavings in tests.
//!
//! A point costs one relaxed atomic load until a controller attaches to it. Attaching arms
//! the point once: the first thread to reach it (optionally only for a given key) parks
//! until the controller resumes or detaches.

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::error::CacheError;
use crate::BlockId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncPointId {
    /// Lookup found a candidate entry and released the bucket lock, entry lock not yet taken.
    PostBucketUnlock = 0,
    /// Miss path holds a claimed slot and is about to link it into the index.
    PreInsertLink = 1,
    /// The Doing-I/O entry is published and its lock released; the loader has not run.
    PostIoPublish = 2,
    /// Background rehash finished a batch.
    ResizeRehashBatch = 3,
    /// An evictor locked a victim slot and decided to reuse it.
    EvictClaimed = 4,
}

impl SyncPointId {
    pub const ALL: [SyncPointId; 5] = [
        SyncPointId::PostBucketUnlock,
        SyncPointId::PreInsertLink,
        SyncPointId::PostIoPublish,
        SyncPointId::ResizeRehashBatch,
        SyncPointId::EvictClaimed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyncPointId::PostBucketUnlock => "post-bucket-unlock",
            SyncPointId::PreInsertLink => "pre-insert-link",
            SyncPointId::PostIoPublish => "post-io-publish",
            SyncPointId::ResizeRehashBatch => "resize-rehash-batch",
            SyncPointId::EvictClaimed => "evict-claimed",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, CacheError> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| CacheError::UnknownSyncPoint(name.to_string()))
    }
}

#[derive(Default)]
struct PointState {
    armed: bool,
    key: Option<BlockId>,
    arrived: bool,
    released: bool,
}

#[derive(Default)]
struct Point {
    state: Mutex<PointState>,
    cv: Condvar,
}

#[derive(Default)]
pub struct SyncPoints {
    mask: AtomicU32,
    points: [Point; 5],
}

impl SyncPoints {
    #[inline]
    pub(crate) fn hit(&self, id: SyncPointId, key: BlockId) {
        if self.mask.load(Ordering::Relaxed) & (1 << id as u32) != 0 {
            self.hit_slow(id, key);
        }
    }

    #[cold]
    fn hit_slow(&self, id: SyncPointId, key: BlockId) {
        let p = &self.points[id as usize];
        let mut s = p.state.lock();
        if !s.armed || s.arrived || s.key.is_some_and(|k| k != key) {
            return;
        }
        s.arrived = true;
        p.cv.notify_all();
        while !s.released {
            p.cv.wait(&mut s);
        }
    }

    /// Arm the named point. Only one controller per point at a time.
    pub fn attach(&self, name: &str) -> Result<SyncPointCtl<'_>, CacheError> {
        self.attach_inner(SyncPointId::from_name(name)?, None)
    }

    /// Arm the named point for requests on `key` only.
    pub fn attach_for(&self, name: &str, key: BlockId) -> Result<SyncPointCtl<'_>, CacheError> {
        self.attach_inner(SyncPointId::from_name(name)?, Some(key))
    }

    fn attach_inner(&self, id: SyncPointId, key: Option<BlockId>) -> Result<SyncPointCtl<'_>, CacheError> {
        let p = &self.points[id as usize];
        *p.state.lock() = PointState {
            armed: true,
            key,
            arrived: false,
            released: false,
        };
        self.mask.fetch_or(1 << id as u32, Ordering::SeqCst);
        Ok(SyncPointCtl { points: self, id })
    }

    pub fn any_attached(&self) -> bool {
        self.mask.load(Ordering::Relaxed) != 0
    }
}

/// Controller for one armed point. Dropping it detaches and releases any parked thread.
pub struct SyncPointCtl<'a> {
    points: &'a SyncPoints,
    id: SyncPointId,
}

impl SyncPointCtl<'_> {
    pub fn name(&self) -> &'static str {
        self.id.name()
    }

    /// Block until a thread parks at the point.
    pub fn wait_arrived(&self, timeout: Duration) -> Result<(), CacheError> {
        let p = &self.points.points[self.id as usize];
        let deadline = Instant::now() + timeout;
        let mut s = p.state.lock();
        while !s.arrived {
            if p.cv.wait_until(&mut s, deadline).timed_out() && !s.arrived {
                return Err(CacheError::SyncPointTimeout(self.id.name().to_string()));
            }
        }
        Ok(())
    }

    pub fn has_arrived(&self) -> bool {
        self.points.points[self.id as usize].state.lock().arrived
    }

    /// Let the parked thread continue. The point stays attached but will not pause again.
    pub fn resume(&self) {
        let p = &self.points.points[self.id as usize];
        let mut s = p.state.lock();
        s.released = true;
        p.cv.notify_all();
    }

    pub fn detach(self) {}
}

impl Drop for SyncPointCtl<'_> {
    fn drop(&mut self) {
        self.points.mask.fetch_and(!(1 << self.id as u32), Ordering::SeqCst);
        let p = &self.points.points[self.id as usize];
        let mut s = p.state.lock();
        s.armed = false;
        s.released = true;
        p.cv.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_rejected() {
        let sp = SyncPoints::default();
        assert!(matches!(sp.attach("nope"), Err(CacheError::UnknownSyncPoint(_))));
    }

    #[test]
    fn never_reached_times_out() {
        let sp = SyncPoints::default();
        let ctl = sp.attach("evict-claimed").unwrap();
        let err = ctl.wait_arrived(Duration::from_millis(20)).unwrap_err();
        assert!(matches!(err, CacheError::SyncPointTimeout(_)));
        ctl.detach();
        assert!(!sp.any_attached());
    }

    #[test]
    fn pauses_first_matching_thread() {
        let sp = SyncPoints::default();
        let ctl = sp.attach_for("pre-insert-link", BlockId(3)).unwrap();
        std::thread::scope(|s| {
            // Other keys pass straight through.
            sp.hit(SyncPointId::PreInsertLink, BlockId(1));
            let t = s.spawn(|| sp.hit(SyncPointId::PreInsertLink, BlockId(3)));
            ctl.wait_arrived(Duration::from_secs(5)).unwrap();
            assert!(!t.is_finished());
            ctl.resume();
            t.join().unwrap();
        });
        // One-shot: a second arrival does not park.
        sp.hit(SyncPointId::PreInsertLink, BlockId(3));
    }
}
