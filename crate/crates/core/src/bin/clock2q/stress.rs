use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clock2q::concurrent::{CacheOptions, ConcurrentCache, FlushPolicy};
use clock2q::error::IoCallbackError;
use clock2q::{BlockId, CacheError, PolicyConfig, PolicyKind, PolicyState};

#[derive(Args)]
pub struct StressArgs {
    #[arg(long, default_value_t = 8)]
    threads: usize,
    /// Operations per thread
    #[arg(long, default_value_t = 1_000_000)]
    ops: u64,
    /// Initial cache capacity in blocks
    #[arg(long, default_value_t = 10_000)]
    blocks: usize,
    /// Distinct keys; defaults to 6x the initial capacity
    #[arg(long)]
    universe: Option<u64>,
    #[arg(long, default_value_t = 0.3)]
    write_frac: f64,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    /// Capacities to resize to, spread evenly over the run
    #[arg(long, value_delimiter = ',', value_name = "N,N,..")]
    resize: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Payloads carry their key and a per-key write version.
fn stamp(buf: &mut [u8], key: u64, version: u64) {
    buf[..8].copy_from_slice(&key.to_le_bytes());
    buf[8..16].copy_from_slice(&version.to_le_bytes());
}

fn read_stamp(buf: &[u8]) -> (u64, u64) {
    let k = u64::from_le_bytes(buf[..8].try_into().unwrap());
    let v = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    (k, v)
}

/// Backing store: the newest flushed version of every key.
struct Disk(Vec<AtomicU64>);

impl Disk {
    fn load(&self, key: BlockId, buf: &mut [u8]) -> Result<(), IoCallbackError> {
        stamp(buf, key.0, self.0[key.0 as usize].load(Ordering::Acquire));
        Ok(())
    }

    fn store(&self, key: BlockId, buf: &[u8]) -> Result<(), IoCallbackError> {
        let (k, v) = read_stamp(buf);
        if k != key.0 {
            return Err(format!("flushing block {} with payload for {k}", key.0).into());
        }
        self.0[k as usize].fetch_max(v, Ordering::AcqRel);
        Ok(())
    }
}

struct Failures {
    count: AtomicU64,
    first: Mutex<Vec<String>>,
}

impl Failures {
    fn record(&self, msg: String) {
        self.count.fetch_add(1, Ordering::Relaxed);
        let mut first = self.first.lock().unwrap();
        if first.len() < 10 {
            first.push(msg);
        }
    }
}

pub fn run(a: &StressArgs) -> Result<bool> {
    if a.threads == 0 {
        bail!("--threads must be at least 1");
    }
    if a.block_size < 16 {
        bail!("--block-size must be at least 16");
    }
    if !(0.0..=1.0).contains(&a.write_frac) {
        bail!("--write-frac {} is outside [0, 1]", a.write_frac);
    }
    let universe = a.universe.unwrap_or(6 * a.blocks as u64);
    if universe < a.threads as u64 {
        bail!("--universe must be at least --threads");
    }
    let reserve = a.resize.iter().copied().fold(a.blocks, usize::max);
    let cfg = PolicyConfig::for_kind(PolicyKind::Clock2QPlus, a.blocks);
    let cache = ConcurrentCache::new(CacheOptions::new(cfg.clone(), a.block_size).reserve(reserve))?;
    let disk = Disk((0..universe).map(|_| AtomicU64::new(0)).collect());
    let failures = Failures {
        count: AtomicU64::new(0),
        first: Mutex::new(Vec::new()),
    };
    let progress = AtomicU64::new(0);
    let oracle = a.threads == 1 && a.resize.is_empty() && a.write_frac == 0.0;
    let mismatches = AtomicU64::new(0);
    let start = Instant::now();

    let mut resizes = Vec::new();
    let latest: Vec<HashMap<u64, u64>> = thread::scope(|s| {
        let workers: Vec<_> = (0..a.threads)
            .map(|t| {
                let (cache, disk, failures, progress, mismatches) = (&cache, &disk, &failures, &progress, &mismatches);
                let cfg = cfg.clone();
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let mut policy = oracle.then(|| PolicyState::new(PolicyKind::Clock2QPlus, cfg).unwrap());
                    let mut latest: HashMap<u64, u64> = HashMap::new();
                    let mut buf = vec![0u8; a.block_size];
                    let threads = a.threads as u64;
                    for op in 0..a.ops {
                        let u: f64 = rng.random();
                        let mut key = ((u * u * u) * universe as f64) as u64;
                        let write = rng.random_bool(a.write_frac);
                        if write {
                            // Each thread writes only its own keys so it knows their newest version.
                            key = key / threads * threads + t as u64;
                            if key >= universe {
                                key -= threads;
                            }
                        }
                        let mut loaded = false;
                        loop {
                            let r = if write {
                                stamp(&mut buf, key, op + 1);
                                cache.write(BlockId(key), &buf, |k, b| disk.load(k, b))
                            } else {
                                cache.get(BlockId(key), |k, b| {
                                    loaded = true;
                                    disk.load(k, b)
                                })
                            };
                            match r {
                                Ok(h) => {
                                    let (k, v) = read_stamp(&h.read());
                                    if k != key {
                                        failures.record(format!("read block {key}, payload says {k}"));
                                    } else if key % threads == t as u64 && !write {
                                        let want = latest.get(&key).copied().unwrap_or(0);
                                        if v != want {
                                            failures.record(format!("block {key}: version {v}, expected {want}"));
                                        }
                                    }
                                    break;
                                }
                                Err(CacheError::NoEvictableEntry) => {
                                    if let Err(e) = cache.flush(FlushPolicy::All, |k, b| disk.store(k, b)) {
                                        failures.record(e.to_string());
                                        break;
                                    }
                                }
                                Err(e) => {
                                    failures.record(format!("block {key}: {e}"));
                                    break;
                                }
                            }
                        }
                        if write {
                            latest.insert(key, op + 1);
                        }
                        if let Some(p) = policy.as_mut() {
                            if p.access(BlockId(key), false).is_hit() == loaded {
                                mismatches.fetch_add(1, Ordering::Relaxed);
                            }
                        }
                        if op % 20_000 == 19_999 {
                            let fp = FlushPolicy::Watermark { low: 0.1, high: 0.2 };
                            if let Err(e) = cache.flush(fp, |k, b| disk.store(k, b)) {
                                failures.record(e.to_string());
                            }
                        }
                        progress.fetch_add(1, Ordering::Relaxed);
                    }
                    latest
                })
            })
            .collect();

        let total = a.ops * a.threads as u64;
        let n = a.resize.len() as u64;
        for (i, &target) in a.resize.iter().enumerate() {
            let at = total * (i as u64 + 1) / (n + 1);
            while progress.load(Ordering::Relaxed) < at {
                if workers.iter().all(|w| w.is_finished()) {
                    break;
                }
                thread::sleep(Duration::from_millis(1));
            }
            loop {
                match cache.resize(target, |k, b| disk.store(k, b)) {
                    Ok(r) => {
                        resizes.push(format!("{}->{}", r.from, r.to));
                        break;
                    }
                    Err(CacheError::ResizeBusy) => thread::sleep(Duration::from_millis(1)),
                    Err(e) => {
                        failures.record(format!("resize to {target}: {e}"));
                        break;
                    }
                }
            }
        }
        workers.into_iter().map(|w| w.join().expect("worker panicked")).collect()
    });
    let secs = start.elapsed().as_secs_f64();

    // Every key must read back its newest version, from the cache or from disk.
    let mut verified = 0u64;
    for key in 0..universe {
        let want = latest[(key % a.threads as u64) as usize].get(&key).copied().unwrap_or(0);
        loop {
            match cache.get(BlockId(key), |k, b| disk.load(k, b)) {
                Ok(h) => {
                    let got = read_stamp(&h.read());
                    if got != (key, want) {
                        failures.record(format!("final read of block {key}: {got:?}, expected version {want}"));
                    }
                    verified += 1;
                    break;
                }
                Err(CacheError::NoEvictableEntry) => {
                    if let Err(e) = cache.flush(FlushPolicy::All, |k, b| disk.store(k, b)) {
                        failures.record(e.to_string());
                        break;
                    }
                }
                Err(e) => {
                    failures.record(format!("final read of block {key}: {e}"));
                    break;
                }
            }
        }
    }

    let report = cache.check_invariants();
    let st = cache.stats();
    let failed = failures.count.load(Ordering::Relaxed);
    let mism = mismatches.load(Ordering::Relaxed);
    println!("threads={} ops_per_thread={} seconds={secs:.2}", a.threads, a.ops);
    println!(
        "requests={} hits={} misses={} hit_ratio={:.4} lost_races={} io_waits={} giveups={} flushed={}",
        st.requests,
        st.hits,
        st.misses,
        st.hits as f64 / st.requests.max(1) as f64,
        st.lost_races,
        st.io_waits,
        st.giveups,
        st.flushed
    );
    println!(
        "capacity={} resident={} dirty={} resizes=[{}]",
        cache.capacity(),
        report.resident,
        report.dirty,
        resizes.join(" ")
    );
    println!("verified_keys={verified} failures={failed} invariant_violations={}", report.violations.len());
    if oracle {
        println!("oracle_mismatches={mism}");
    } else {
        println!("oracle=skipped");
    }
    for f in failures.first.lock().unwrap().iter() {
        eprintln!("failure: {f}");
    }
    for v in report.violations.iter().take(10) {
        eprintln!("violation: {v}");
    }
    Ok(failed == 0 && report.is_ok() && mism == 0)
}
