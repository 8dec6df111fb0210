//! Clock2Q+ and related cache replacement policies.
//!
//! - [`policy`]: deterministic single-threaded policy state machines (LRU, FIFO, CLOCK, 2Q,
//!   Clock2Q, S3-FIFO 1/2-bit, Clock2Q+).
//! - [`trace`]: block trace formats, metadata-trace derivation and synthetic generators.
//! - [`sim`]: trace replay with a dirty-block model.
//! - [`analysis`]: improvement over CLOCK, miss-ratio curves, next-reuse-distance reports.
//! - [`concurrent`]: a thread-safe Clock2Q+ block cache with live resize.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod analysis;
pub mod concurrent;
pub mod error;
pub mod policy;
pub mod sim;
pub mod trace;

pub use error::{AnalysisError, CacheError, ConfigError, PolicyError, SimError, TraceError};
pub use policy::{AccessKind, AccessOutcome, PolicyConfig, PolicyKind, PolicyState};

/// Logical block number; the cache key.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for BlockId {
    fn from(v: u64) -> Self {
        BlockId(v)
    }
}

impl From<BlockId> for u64 {
    fn from(b: BlockId) -> Self {
        b.0
    }
}
