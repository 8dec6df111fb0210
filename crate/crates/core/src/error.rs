use thiserror::Error;

use crate::BlockId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid {field}: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum PolicyError {
    #[error("the Small FIFO is not full")]
    SmallNotFull,
    #[error("the Main queue is not full")]
    MainNotFull,
    #[error("every Main queue entry is dirty; nothing can be evicted")]
    EvictionImpossible,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Csv { line: u64, reason: String },
    #[error("byte offset {offset}: {reason}")]
    Bin { offset: u64, reason: String },
    #[error("request {index}: timestamp {time} is earlier than the previous {previous}")]
    DecreasingTime { index: u64, time: u64, previous: u64 },
    #[error("fanout must be at least 1")]
    ZeroFanout,
    #[error("invalid generator parameter: {0}")]
    Generator(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cache size resolves to {blocks} blocks; at least 2 are required")]
    CacheTooSmall { blocks: usize },
    #[error("no cache sizes given")]
    NoSizes,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("baseline miss ratio is zero; improvement is undefined")]
    UndefinedBaseline,
    #[error("miss ratio {0} is outside [0, 1]")]
    InvalidMissRatio(f64),
}

/// Boxed error returned by cache loaders and flush sinks.
pub type IoCallbackError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("loader failed for block {key}: {source}")]
    Load {
        key: BlockId,
        #[source]
        source: IoCallbackError,
    },
    #[error("another thread's load of block {0} failed")]
    PeerLoadFailed(BlockId),
    #[error("gave up on block {key} after {retries} lost races")]
    Contention { key: BlockId, retries: u32 },
    #[error("no evictable entry: every candidate is dirty, pinned or loading")]
    NoEvictableEntry,
    #[error("payload is {got} bytes, block size is {expected}")]
    PayloadSize { expected: usize, got: usize },
    #[error("resize to {requested} blocks exceeds the reserved {reserved}")]
    ExceedsReserve { requested: usize, reserved: usize },
    #[error("a resize is already in progress")]
    ResizeBusy,
    #[error("flush stopped after {flushed} blocks: {source}")]
    Flush {
        flushed: usize,
        #[source]
        source: IoCallbackError,
    },
    #[error("unknown sync point `{0}`")]
    UnknownSyncPoint(String),
    #[error("timed out waiting for sync point `{0}`")]
    SyncPointTimeout(String),
}
