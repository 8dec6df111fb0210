use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

/// Time source for dirty-block ages, in whole seconds.
pub trait Clock: Send + Sync {
    fn now_sec(&self) -> u64;
}

/// Seconds elapsed since the clock was created.
#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now_sec(&self) -> u64 {
        self.start.elapsed().as_secs()
    }
}

/// Clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(start: u64) -> Self {
        ManualClock {
            now: AtomicU64::new(start),
        }
    }

    pub fn set(&self, sec: u64) {
        self.now.store(sec, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.now.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_sec(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}
