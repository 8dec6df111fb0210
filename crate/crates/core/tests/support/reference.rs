//! Naive reference model of every policy: plain deques and vectors, linear scans, no code
//! shared with the library. Ordering conventions:
//! - Small FIFO: front is the oldest entry; a dirty skip moves it to the back.
//! - Clock: front is the entry under the hand; inserts go to the back.
//! - LRU: index 0 is the most recently used entry.
//! - Ghost: fixed-length deque of optional keys, front is the oldest slot.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Lru,
    Fifo,
    Clock,
    TwoQ,
    Clock2Q,
    S3Fifo1,
    S3Fifo2,
    Clock2QPlus,
}

pub const ALL_KINDS: [Kind; 8] = [
    Kind::Lru,
    Kind::Fifo,
    Kind::Clock,
    Kind::TwoQ,
    Kind::Clock2Q,
    Kind::S3Fifo1,
    Kind::S3Fifo2,
    Kind::Clock2QPlus,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Served {
    MainHit,
    SmallHitInWindow,
    SmallHitOutWindow,
    GhostMiss,
    ColdMiss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum From {
    Small,
    Main,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum To {
    Main,
    Ghost,
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Departure {
    pub key: u64,
    pub from: From,
    pub to: To,
    pub ref_skips: u32,
    pub dirty_skips: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub served: Served,
    pub departures: Vec<Departure>,
    /// Dirty entries skipped before giving up on the Small FIFO, if it gave up.
    pub gave_up: Option<u32>,
    pub cached: bool,
}

#[derive(Clone, Debug)]
pub struct Params {
    pub total: usize,
    pub small_frac: f64,
    pub ghost_frac: f64,
    pub window_frac: f64,
    pub two_bit: bool,
    pub ref_skip_limit: Option<u32>,
    pub scan_cap: Option<usize>,
    pub promote_dirty: bool,
}

impl Params {
    pub fn defaults(kind: Kind, total: usize) -> Self {
        let (s, g, w) = match kind {
            Kind::Lru | Kind::Fifo | Kind::Clock => (0.0, 0.0, 0.0),
            Kind::TwoQ | Kind::Clock2Q => (0.25, 0.5, 1.0),
            Kind::S3Fifo1 | Kind::S3Fifo2 => (0.1, 1.0, 0.0),
            Kind::Clock2QPlus => (0.1, 0.5, 0.5),
        };
        Params {
            total,
            small_frac: s,
            ghost_frac: g,
            window_frac: w,
            two_bit: kind == Kind::S3Fifo2,
            ref_skip_limit: None,
            scan_cap: None,
            promote_dirty: false,
        }
    }
}

#[derive(Clone, Debug)]
struct Item {
    key: u64,
    hits: u8,
    dirty: bool,
    stamp: u64,
}

#[derive(Clone, Debug)]
pub struct Reference {
    kind: Kind,
    small_cap: usize,
    main_cap: usize,
    window: usize,
    scan_cap: usize,
    threshold: u8,
    max_hits: u8,
    ref_skip_limit: Option<u32>,
    promote_dirty: bool,
    small: VecDeque<Item>,
    main: VecDeque<Item>,
    ghost: VecDeque<Option<u64>>,
    clock: u64,
}

fn round(x: f64) -> usize {
    x.round() as usize
}

impl Reference {
    pub fn new(kind: Kind, p: &Params) -> Self {
        let single = matches!(kind, Kind::Lru | Kind::Fifo | Kind::Clock);
        let promotes = matches!(kind, Kind::S3Fifo1 | Kind::S3Fifo2 | Kind::Clock2QPlus);
        let (small_cap, ghost_cap) = if single {
            (0, 0)
        } else {
            let s = round(p.small_frac * p.total as f64).max(1).min(p.total - 1);
            (s, round(p.ghost_frac * p.total as f64))
        };
        let window = if promotes {
            round(p.window_frac * small_cap as f64).min(small_cap)
        } else {
            small_cap
        };
        let scan_cap = p.scan_cap.unwrap_or(small_cap.min(20)).max(1);
        Reference {
            kind,
            small_cap,
            main_cap: p.total - small_cap,
            window,
            scan_cap,
            threshold: if p.two_bit { 2 } else { 1 },
            max_hits: if p.two_bit { 3 } else { 1 },
            ref_skip_limit: p.ref_skip_limit,
            promote_dirty: p.promote_dirty,
            small: VecDeque::new(),
            main: VecDeque::new(),
            ghost: std::iter::repeat(None).take(ghost_cap).collect(),
            clock: 0,
        }
    }

    fn promotes(&self) -> bool {
        matches!(self.kind, Kind::S3Fifo1 | Kind::S3Fifo2 | Kind::Clock2QPlus)
    }

    fn stamp(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn resident(&self) -> Vec<u64> {
        self.small.iter().chain(self.main.iter()).map(|i| i.key).collect()
    }

    pub fn ghost_keys(&self) -> Vec<u64> {
        self.ghost.iter().flatten().copied().collect()
    }

    pub fn flush(&mut self, key: u64) -> bool {
        for item in self.small.iter_mut().chain(self.main.iter_mut()) {
            if item.key == key {
                let was = item.dirty;
                item.dirty = false;
                return was;
            }
        }
        false
    }

    pub fn access(&mut self, key: u64, write: bool) -> Step {
        if let Some(pos) = self.main.iter().position(|i| i.key == key) {
            match self.kind {
                Kind::Lru | Kind::TwoQ => {
                    let mut item = self.main.remove(pos).unwrap();
                    item.dirty |= write;
                    self.main.push_front(item);
                }
                Kind::Fifo => self.main[pos].dirty |= write,
                _ => {
                    self.main[pos].hits = 1;
                    self.main[pos].dirty |= write;
                }
            }
            return self.step(Served::MainHit);
        }

        if let Some(pos) = self.small.iter().position(|i| i.key == key) {
            let age = self.clock - self.small[pos].stamp;
            let inside = (age as usize) < self.window;
            let max = self.max_hits;
            let item = &mut self.small[pos];
            if !inside {
                item.hits = (item.hits + 1).min(max);
            }
            item.dirty |= write;
            return self.step(if inside {
                Served::SmallHitInWindow
            } else {
                Served::SmallHitOutWindow
            });
        }

        let mut step;
        let ghost_pos = self.ghost.iter().position(|g| *g == Some(key));
        if let Some(gp) = ghost_pos {
            self.ghost[gp] = None;
            step = self.step(Served::GhostMiss);
            step.cached = self.put_main(key, write, &mut step.departures);
            return step;
        }

        step = self.step(Served::ColdMiss);
        if self.small_cap == 0 {
            step.cached = self.put_main(key, write, &mut step.departures);
            return step;
        }
        if self.small.len() == self.small_cap {
            if let Some(skips) = self.drain_small(&mut step.departures) {
                step.gave_up = Some(skips);
                step.cached = self.put_main(key, write, &mut step.departures);
                return step;
            }
        }
        let stamp = self.stamp();
        self.small.push_back(Item {
            key,
            hits: 0,
            dirty: write,
            stamp,
        });
        step
    }

    fn step(&self, served: Served) -> Step {
        Step {
            served,
            departures: Vec::new(),
            gave_up: None,
            cached: true,
        }
    }

    fn main_has_room(&self) -> bool {
        self.main.len() < self.main_cap || self.main.iter().any(|i| !i.dirty)
    }

    /// Frees one Small FIFO position. Returns the skip count when it gives up instead.
    fn drain_small(&mut self, out: &mut Vec<Departure>) -> Option<u32> {
        let mut dirty_skips = 0u32;
        loop {
            let head = self.small.front().unwrap().clone();
            let hot = self.promotes() && head.hits >= self.threshold;
            let movable = head.dirty && self.promote_dirty && hot && self.main_has_room();
            if head.dirty && !movable {
                let mut item = self.small.pop_front().unwrap();
                item.stamp = self.stamp();
                self.small.push_back(item);
                dirty_skips += 1;
                if dirty_skips as usize >= self.scan_cap {
                    return Some(dirty_skips);
                }
                continue;
            }
            self.small.pop_front();
            let mut dep = Departure {
                key: head.key,
                from: From::Small,
                to: To::Ghost,
                ref_skips: 0,
                dirty_skips,
            };
            if hot {
                if self.main_has_room() {
                    dep.to = To::Main;
                    out.push(dep);
                    let ok = self.put_main(head.key, head.dirty, out);
                    assert!(ok);
                } else {
                    dep.to = To::Drop;
                    out.push(dep);
                }
            } else {
                if !self.ghost.is_empty() {
                    self.ghost.pop_front();
                    self.ghost.push_back(Some(head.key));
                }
                out.push(dep);
            }
            return None;
        }
    }

    fn put_main(&mut self, key: u64, dirty: bool, out: &mut Vec<Departure>) -> bool {
        if self.main.len() == self.main_cap {
            if !self.main.iter().any(|i| !i.dirty) {
                return false;
            }
            let dep = self.evict_main();
            out.push(dep);
        }
        let item = Item {
            key,
            hits: 0,
            dirty,
            stamp: 0,
        };
        match self.kind {
            Kind::Lru | Kind::TwoQ => self.main.push_front(item),
            _ => self.main.push_back(item),
        }
        true
    }

    fn evict_main(&mut self) -> Departure {
        if matches!(self.kind, Kind::Lru | Kind::TwoQ) {
            let mut dirty_skips = 0;
            let mut pos = self.main.len() - 1;
            while self.main[pos].dirty {
                dirty_skips += 1;
                pos -= 1;
            }
            let item = self.main.remove(pos).unwrap();
            return Departure {
                key: item.key,
                from: From::Main,
                to: To::Drop,
                ref_skips: 0,
                dirty_skips,
            };
        }
        let mut ref_skips = 0u32;
        let mut dirty_skips = 0u32;
        loop {
            let front = self.main.front_mut().unwrap();
            let under_limit = self.ref_skip_limit.map_or(true, |l| ref_skips < l);
            if front.dirty {
                dirty_skips += 1;
            } else if front.hits > 0 && under_limit {
                front.hits = 0;
                ref_skips += 1;
            } else {
                let item = self.main.pop_front().unwrap();
                return Departure {
                    key: item.key,
                    from: From::Main,
                    to: To::Drop,
                    ref_skips,
                    dirty_skips,
                };
            }
            let item = self.main.pop_front().unwrap();
            self.main.push_back(item);
        }
    }
}
