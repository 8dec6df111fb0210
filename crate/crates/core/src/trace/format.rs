//! CSV and BIN trace encodings.
//!
//! CSV: `time_sec,lbn,op,size_bytes` per line, `op` is `r` or `w`.
//! BIN: the 8-byte magic `MCTRACE1`, then 24-byte little-endian records
//! `u64 time_sec, u64 lbn, u32 size_bytes, u8 op (0 read, 1 write), 3 zero bytes`.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Op, Trace, TraceRequest};
use crate::error::TraceError;
use crate::BlockId;

pub const BIN_MAGIC: &[u8; 8] = b"MCTRACE1";
pub const BIN_RECORD_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Csv,
    Bin,
}

impl FromStr for Format {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "bin" => Ok(Format::Bin),
            _ => Err(TraceError::Generator(format!("unknown trace format `{s}`"))),
        }
    }
}

/// Peek at a buffered stream and report BIN if it starts with the magic.
pub fn detect_format<R: BufRead>(reader: &mut R) -> io::Result<Format> {
    let buf = reader.fill_buf()?;
    Ok(if buf.starts_with(BIN_MAGIC) {
        Format::Bin
    } else {
        Format::Csv
    })
}

enum Inner<R: Read> {
    Csv(csv::StringRecordsIntoIter<R>),
    Bin { reader: R, offset: u64 },
}

/// Streaming decoder yielding validated requests.
pub struct TraceReader<R: Read> {
    inner: Inner<R>,
    index: u64,
    previous_time: u64,
    done: bool,
}

impl<R: Read> TraceReader<R> {
    /// `header` skips one leading CSV line; ignored for BIN.
    pub fn new(mut reader: R, format: Format, header: bool) -> Result<Self, TraceError> {
        let inner = match format {
            Format::Csv => Inner::Csv(
                csv::ReaderBuilder::new()
                    .has_headers(header)
                    .flexible(true)
                    .trim(csv::Trim::All)
                    .from_reader(reader)
                    .into_records(),
            ),
            Format::Bin => {
                let mut magic = [0u8; 8];
                let got = read_full(&mut reader, &mut magic)?;
                if got == 0 {
                    // An empty stream is an empty trace in either format.
                    return Ok(TraceReader {
                        inner: Inner::Bin { reader, offset: 0 },
                        index: 0,
                        previous_time: 0,
                        done: true,
                    });
                }
                if got < 8 || &magic != BIN_MAGIC {
                    return Err(TraceError::Bin {
                        offset: 0,
                        reason: "missing MCTRACE1 magic".into(),
                    });
                }
                Inner::Bin { reader, offset: 8 }
            }
        };
        Ok(TraceReader {
            inner,
            index: 0,
            previous_time: 0,
            done: false,
        })
    }

    fn next_raw(&mut self) -> Option<Result<TraceRequest, TraceError>> {
        match &mut self.inner {
            Inner::Csv(records) => {
                let rec = records.next()?;
                Some(rec.map_err(csv_error).and_then(|r| parse_csv(&r)))
            }
            Inner::Bin { reader, offset } => {
                let mut buf = [0u8; BIN_RECORD_LEN];
                match read_full(reader, &mut buf) {
                    Ok(0) => None,
                    Ok(n) if n < BIN_RECORD_LEN => Some(Err(TraceError::Bin {
                        offset: *offset,
                        reason: format!("truncated record ({n} of {BIN_RECORD_LEN} bytes)"),
                    })),
                    Ok(_) => {
                        let at = *offset;
                        *offset += BIN_RECORD_LEN as u64;
                        Some(decode_bin(&buf, at))
                    }
                    Err(e) => Some(Err(e.into())),
                }
            }
        }
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceRequest, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = match self.next_raw() {
            None => {
                self.done = true;
                return None;
            }
            Some(Err(e)) => Err(e),
            Some(Ok(r)) if r.time_sec < self.previous_time => Err(TraceError::DecreasingTime {
                index: self.index,
                time: r.time_sec,
                previous: self.previous_time,
            }),
            Some(Ok(r)) => {
                self.previous_time = r.time_sec;
                self.index += 1;
                return Some(Ok(r));
            }
        };
        self.done = true;
        Some(item)
    }
}

fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match reader.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn csv_error(e: csv::Error) -> TraceError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TraceError::Io(io),
        other => TraceError::Csv {
            line,
            reason: format!("{other:?}"),
        },
    }
}

fn parse_csv(rec: &csv::StringRecord) -> Result<TraceRequest, TraceError> {
    let line = rec.position().map_or(0, |p| p.line());
    let bad = |reason: String| TraceError::Csv { line, reason };
    if rec.len() != 4 {
        return Err(bad(format!("expected 4 fields, found {}", rec.len())));
    }
    let num = |i: usize, name: &str| -> Result<u64, TraceError> {
        rec[i]
            .parse::<u64>()
            .map_err(|e| bad(format!("{name} `{}`: {e}", &rec[i])))
    };
    let op = match &rec[2] {
        "r" | "R" => Op::Read,
        "w" | "W" => Op::Write,
        other => return Err(bad(format!("op `{other}` is not r or w"))),
    };
    let size = num(3, "size_bytes")?;
    Ok(TraceRequest {
        time_sec: num(0, "time_sec")?,
        lbn: BlockId(num(1, "lbn")?),
        op,
        size_bytes: u32::try_from(size).map_err(|_| bad(format!("size_bytes {size} exceeds u32")))?,
    })
}

fn decode_bin(buf: &[u8; BIN_RECORD_LEN], offset: u64) -> Result<TraceRequest, TraceError> {
    let u64_at = |i: usize| u64::from_le_bytes(buf[i..i + 8].try_into().unwrap());
    let op = match buf[20] {
        0 => Op::Read,
        1 => Op::Write,
        b => {
            return Err(TraceError::Bin {
                offset: offset + 20,
                reason: format!("op byte {b} is not 0 or 1"),
            })
        }
    };
    if buf[21..24] != [0, 0, 0] {
        return Err(TraceError::Bin {
            offset: offset + 21,
            reason: "non-zero padding".into(),
        });
    }
    Ok(TraceRequest {
        time_sec: u64_at(0),
        lbn: BlockId(u64_at(8)),
        size_bytes: u32::from_le_bytes(buf[16..20].try_into().unwrap()),
        op,
    })
}

pub(crate) fn encode_bin(r: &TraceRequest) -> [u8; BIN_RECORD_LEN] {
    let mut buf = [0u8; BIN_RECORD_LEN];
    buf[0..8].copy_from_slice(&r.time_sec.to_le_bytes());
    buf[8..16].copy_from_slice(&r.lbn.0.to_le_bytes());
    buf[16..20].copy_from_slice(&r.size_bytes.to_le_bytes());
    buf[20] = r.op.is_write() as u8;
    buf
}

/// Decode a whole stream and compute its metadata.
pub fn load_trace<R: Read>(reader: R, format: Format, header: bool) -> Result<Trace, TraceError> {
    let requests = TraceReader::new(reader, format, header)?.collect::<Result<Vec<_>, _>>()?;
    Ok(Trace::new(requests))
}

/// Load a file, detecting the format from its first bytes unless `format` is given.
pub fn load_path(path: &Path, format: Option<Format>, header: bool) -> Result<Trace, TraceError> {
    let mut reader = BufReader::new(File::open(path)?);
    let format = match format {
        Some(f) => f,
        None => detect_format(&mut reader)?,
    };
    load_trace(reader, format, header)
}

pub fn write_trace<W: Write>(requests: &[TraceRequest], format: Format, writer: W) -> Result<(), TraceError> {
    let mut w = BufWriter::new(writer);
    match format {
        Format::Csv => {
            for r in requests {
                let op = if r.op.is_write() { 'w' } else { 'r' };
                writeln!(w, "{},{},{},{}", r.time_sec, r.lbn.0, op, r.size_bytes)?;
            }
        }
        Format::Bin => {
            w.write_all(BIN_MAGIC)?;
            for r in requests {
                w.write_all(&encode_bin(r))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_path(path: &Path, requests: &[TraceRequest], format: Format) -> Result<(), TraceError> {
    write_trace(requests, format, File::create(path)?)
}
