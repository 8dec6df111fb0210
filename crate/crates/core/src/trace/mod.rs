//! Block traces: formats, metadata-trace derivation and synthetic workloads.

mod format;
mod gen;

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

pub use self::format::{
    detect_format, load_path, load_trace, write_path, write_trace, Format, TraceReader, BIN_MAGIC,
    BIN_RECORD_LEN,
};
pub use self::gen::{generate_correlated, generate_zipf, CorrelatedSpec, ZipfSpec};

use crate::error::TraceError;
use crate::BlockId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn is_write(self) -> bool {
        self == Op::Write
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRequest {
    /// Seconds since trace start; 0 when the trace has no clock.
    pub time_sec: u64,
    pub lbn: BlockId,
    pub op: Op,
    /// Informational; one request is one block unless extents are expanded.
    pub size_bytes: u32,
}

impl TraceRequest {
    pub fn read(lbn: u64) -> Self {
        TraceRequest {
            time_sec: 0,
            lbn: BlockId(lbn),
            op: Op::Read,
            size_bytes: 4096,
        }
    }

    pub fn write(lbn: u64) -> Self {
        TraceRequest {
            op: Op::Write,
            ..Self::read(lbn)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub request_count: u64,
    /// Distinct blocks referenced.
    pub footprint: u64,
    pub write_fraction: f64,
    pub has_timestamps: bool,
}

impl TraceMeta {
    pub fn compute(requests: &[TraceRequest]) -> Self {
        let mut seen = FxHashSet::default();
        let mut writes = 0u64;
        let mut has_timestamps = false;
        for r in requests {
            seen.insert(r.lbn);
            writes += r.op.is_write() as u64;
            has_timestamps |= r.time_sec > 0;
        }
        let n = requests.len() as u64;
        TraceMeta {
            request_count: n,
            footprint: seen.len() as u64,
            write_fraction: if n == 0 { 0.0 } else { writes as f64 / n as f64 },
            has_timestamps,
        }
    }
}

/// A fully loaded trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub requests: Vec<TraceRequest>,
    pub meta: TraceMeta,
}

impl Trace {
    pub fn new(requests: Vec<TraceRequest>) -> Self {
        let meta = TraceMeta::compute(&requests);
        Trace { requests, meta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OpMode {
    /// Keep each request's read/write flag.
    #[default]
    Preserve,
    /// Treat every metadata access as a read.
    AllRead,
}

/// Map a data trace onto B+-tree leaf blocks: each LBN becomes `floor(lbn / fanout)`.
/// Consecutive duplicates are kept; they are exactly the correlated references.
pub fn derive_metadata(
    requests: &[TraceRequest],
    fanout: u64,
    op_mode: OpMode,
) -> Result<Vec<TraceRequest>, TraceError> {
    if fanout == 0 {
        return Err(TraceError::ZeroFanout);
    }
    Ok(requests
        .iter()
        .map(|r| TraceRequest {
            lbn: BlockId(r.lbn.0 / fanout),
            op: match op_mode {
                OpMode::Preserve => r.op,
                OpMode::AllRead => Op::Read,
            },
            ..*r
        })
        .collect())
}

/// Split multi-block requests into one request per `block_size`-byte block, starting at the
/// request's LBN. Zero-sized requests still touch one block.
pub fn expand_extents(requests: &[TraceRequest], block_size: u32) -> Result<Vec<TraceRequest>, TraceError> {
    if block_size == 0 {
        return Err(TraceError::Generator("block size must be positive".into()));
    }
    let mut out = Vec::with_capacity(requests.len());
    for r in requests {
        let (size, bs) = (r.size_bytes as u64, block_size as u64);
        let blocks = size.div_ceil(bs).max(1);
        for i in 0..blocks {
            let remaining = size.saturating_sub(i * bs);
            out.push(TraceRequest {
                lbn: BlockId(r.lbn.0.wrapping_add(i)),
                size_bytes: remaining.min(bs) as u32,
                ..*r
            });
        }
    }
    Ok(out)
}
