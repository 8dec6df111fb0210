use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use clock2q::analysis::{compare_csv, compare_report, curve_csv, miss_ratio_curve, nrd_report, NrdReport};
use clock2q::sim::{default_sizes, sweep_sizes, CacheSize, ConfigOverrides, DirtyModel, SimResult};
use clock2q::trace::{
    derive_metadata, detect_format, generate_correlated, generate_zipf, load_path, load_trace, write_trace,
    CorrelatedSpec, Format, OpMode, Trace, ZipfSpec,
};
use clock2q::{PolicyConfig, PolicyKind};

mod stress;

const CURVE_FRACS: [f64; 8] = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2];

#[derive(Parser)]
#[command(name = "clock2q", version, about = "Cache policy simulator, trace tools and concurrent cache stress test")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map a data trace onto metadata blocks (lbn / fanout)
    Derive(DeriveArgs),
    /// Replay a trace and print one CSV row per (policy, size)
    Simulate(SimArgs),
    /// Every policy at every size, with improvement over CLOCK and block flows
    Compare(SimArgs),
    /// Miss ratio as a function of cache size
    Curve(SimArgs),
    /// Next-reuse-distance histogram of Small FIFO departures
    Nrd(SimArgs),
    /// Write a synthetic trace
    Generate(GenArgs),
    /// Hammer the concurrent cache and check its invariants
    Stress(stress::StressArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Bin => Format::Bin,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirtyMode {
    /// Dirty ref-set blocks stay in the Small FIFO
    Skip,
    /// Dirty ref-set blocks move to the Main queue
    Move,
}

#[derive(Args)]
struct OutArgs {
    /// Write output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DeriveArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Output format; defaults to the input's format
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, default_value_t = 200)]
    fanout: u64,
    /// Treat every metadata access as a read
    #[arg(long)]
    all_read: bool,
    /// Skip one header line of a CSV input
    #[arg(long)]
    header: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Input format; detected from the file when omitted
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    header: bool,
    /// Policy name or `all`; repeatable
    #[arg(long, value_name = "NAME")]
    policy: Vec<String>,
    /// Cache size as a fraction of the trace footprint; repeatable
    #[arg(long, value_name = "F")]
    size_frac: Vec<f64>,
    /// Cache size in blocks; repeatable
    #[arg(long, value_name = "N")]
    size_blocks: Vec<usize>,
    #[arg(long, value_name = "F")]
    small_frac: Option<f64>,
    #[arg(long, value_name = "F")]
    window_frac: Option<f64>,
    #[arg(long, value_name = "F")]
    ghost_frac: Option<f64>,
    /// Maximum ref-set entries the clock hand skips per eviction
    #[arg(long, value_name = "N|inf", value_parser = parse_limit)]
    reinsertion_limit: Option<Limit>,
    #[arg(long, value_name = "N")]
    dirty_scan_cap: Option<usize>,
    /// Model dirty blocks and flushing; without it writes replay as reads
    #[arg(long)]
    dirty: bool,
    #[arg(long, value_name = "SECS")]
    flush_age_sec: Option<u64>,
    /// Dirty-fraction watermarks that start and stop a flush
    #[arg(long, value_name = "LO,HI", value_parser = parse_watermarks)]
    watermarks: Option<(f64, f64)>,
    #[arg(long, value_enum)]
    dirty_mode: Option<DirtyMode>,
    /// Aligned human-readable table instead of CSV
    #[arg(long)]
    pretty: bool,
    /// Also write a matplotlib script that plots the CSV
    #[arg(long, value_name = "PATH")]
    plot_script: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, Debug)]
struct Limit(Option<u32>);

fn parse_limit(s: &str) -> Result<Limit, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(Limit(None));
    }
    s.parse().map(|n| Limit(Some(n))).map_err(|e| format!("`{s}`: {e}"))
}

fn parse_watermarks(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected LO,HI")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(lo)?, p(hi)?))
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenKind {
    Zipf,
    Correlated,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: GenKind,
    #[arg(long, value_enum, default_value = "bin")]
    format: FormatArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    requests: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 10_000)]
    universe: u64,
    #[arg(long, default_value_t = 0.0)]
    write_frac: f64,
    /// Requests per second used for timestamps; 0 leaves them at 0
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    /// Base trace for `correlated`; a Zipf trace from the flags above when omitted
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    burst_k: usize,
    #[arg(long, default_value_t = 10)]
    burst_span: usize,
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Command::Derive(a) => cmd_derive(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Curve(a) => cmd_curve(&a),
        Command::Nrd(a) => cmd_nrd(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Stress(a) => stress::run(&a),
    };
    match r {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

fn open_out(out: &OutArgs) -> Result<Box<dyn Write>> {
    Ok(match &out.out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_text(out: &OutArgs, text: &str) -> Result<()> {
    let mut w = open_out(out)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn cmd_derive(a: &DeriveArgs) -> Result<bool> {
    let mut reader = BufReader::new(File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?);
    let input = detect_format(&mut reader)?;
    let trace = load_trace(reader, input, a.header).with_context(|| format!("reading {}", a.trace.display()))?;
    let mode = if a.all_read { OpMode::AllRead } else { OpMode::Preserve };
    let derived = derive_metadata(&trace.requests, a.fanout, mode)?;
    let format = a.format.map(Format::from).unwrap_or(input);
    write_trace(&derived, format, open_out(&a.out)?)?;
    Ok(true)
}

impl SimArgs {
    fn kinds(&self) -> Result<Vec<PolicyKind>> {
        let mut kinds = Vec::new();
        for p in &self.policy {
            if p.eq_ignore_ascii_case("all") {
                kinds.extend(PolicyKind::ALL);
            } else {
                kinds.push(p.parse()?);
            }
        }
        kinds.dedup();
        Ok(kinds)
    }

    fn sizes(&self, fallback: &[f64]) -> Vec<CacheSize> {
        let mut sizes: Vec<CacheSize> = self.size_frac.iter().map(|&f| CacheSize::Fraction(f)).collect();
        sizes.extend(self.size_blocks.iter().map(|&b| CacheSize::Blocks(b)));
        if sizes.is_empty() {
            sizes = fallback.iter().map(|&f| CacheSize::Fraction(f)).collect();
        }
        sizes
    }

    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            small_frac: self.small_frac,
            ghost_frac: self.ghost_frac,
            window_frac: self.window_frac,
            reinsertion_limit: self.reinsertion_limit.and_then(|l| l.0),
            dirty_scan_cap: self.dirty_scan_cap,
            dirty_promote: self.dirty_mode.map(|m| m == DirtyMode::Move),
        }
    }

    fn dirty_model(&self) -> DirtyModel {
        let mut d = DirtyModel {
            enabled: self.dirty,
            ..DirtyModel::default()
        };
        if let Some(age) = self.flush_age_sec {
            d.flush_age_sec = age;
        }
        if let Some((lo, hi)) = self.watermarks {
            d.low_watermark = lo;
            d.high_watermark = hi;
        }
        d
    }

    /// Reject bad flags before loading anything.
    fn validate(&self, kinds: &[PolicyKind], sizes: &[CacheSize]) -> Result<()> {
        for s in sizes {
            match *s {
                CacheSize::Fraction(f) if !(f > 0.0 && f <= 1.0) => bail!("--size-frac {f} is outside (0, 1]"),
                CacheSize::Blocks(b) if b < 2 => bail!("--size-blocks {b}: need at least 2 blocks"),
                _ => {}
            }
        }
        let o = self.overrides();
        for &k in kinds {
            let cfg: PolicyConfig = o.apply(k, 1000);
            cfg.validate().with_context(|| format!("policy {k}"))?;
        }
        self.dirty_model().validate()?;
        Ok(())
    }

    fn load(&self) -> Result<Trace> {
        load_path(&self.trace, self.format.map(Format::from), self.header)
            .with_context(|| format!("reading {}", self.trace.display()))
    }

    fn emit(&self, csv: &str, plot: Plot) -> Result<()> {
        let text = if self.pretty { pretty(csv) } else { csv.to_string() };
        emit_text(&self.out, &text)?;
        if let Some(path) = &self.plot_script {
            let data = self.out.out.as_deref().unwrap_or(Path::new("results.csv"));
            std::fs::write(path, plot_script(plot, data)).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn cmd_simulate(a: &SimArgs) -> Result<bool> {
    let mut kinds = a.kinds()?;
    if kinds.is_empty() {
        kinds.push(PolicyKind::Clock2QPlus);
    }
    let sizes = if a.size_frac.is_empty() && a.size_blocks.is_empty() {
        default_sizes()
    } else {
        a.sizes(&[])
    };
    a.validate(&kinds, &sizes)?;
    let trace = a.load()?;
    let (o, d) = (a.overrides(), a.dirty_model());
    let mut csv = format!("{}\n", SimResult::CSV_HEADER);
    for k in kinds {
        for (_, r) in sweep_sizes(&trace, k, &o, &sizes, &d)? {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
    }
    a.emit(&csv, Plot::Bars)?;
    Ok(true)
}

fn cmd_compare(a: &SimArgs) -> Result<bool> {
    if !a.policy.is_empty() {
        bail!("compare always runs every policy; drop --policy");
    }
    let sizes = if a.size_frac.is_empty() && a.size_blocks.is_empty() {
        default_sizes()
    } else {
        a.sizes(&[])
    };
    a.validate(&PolicyKind::ALL, &sizes)?;
    let trace = a.load()?;
    let rows = compare_report(&trace, &sizes, &a.overrides(), &a.dirty_model())?;
    a.emit(&compare_csv(&rows), Plot::Bars)?;
    Ok(true)
}

fn cmd_curve(a: &SimArgs) -> Result<bool> {
    let mut kinds = a.kinds()?;
    if kinds.is_empty() {
        kinds.extend(PolicyKind::ALL);
    }
    let sizes = a.sizes(&CURVE_FRACS);
    a.validate(&kinds, &sizes)?;
    let trace = a.load()?;
    let rows = miss_ratio_curve(&trace, &kinds, &sizes, &a.overrides(), &a.dirty_model())?;
    a.emit(&curve_csv(&rows), Plot::Curve)?;
    Ok(true)
}

fn cmd_nrd(a: &SimArgs) -> Result<bool> {
    let mut kinds = a.kinds()?;
    if kinds.is_empty() {
        kinds = vec![PolicyKind::S3Fifo1Bit, PolicyKind::Clock2QPlus];
    }
    let sizes = a.sizes(&[0.01]);
    if sizes.len() != 1 {
        bail!("nrd takes a single cache size");
    }
    a.validate(&kinds, &sizes)?;
    let trace = a.load()?;
    let mut csv = format!("{}\n", NrdReport::CSV_HEADER);
    for k in kinds {
        csv.push_str(&nrd_report(&trace, k, &a.overrides(), sizes[0])?.to_csv());
    }
    a.emit(&csv, Plot::Nrd)?;
    Ok(true)
}

fn cmd_generate(a: &GenArgs) -> Result<bool> {
    let zipf = || {
        generate_zipf(
            &ZipfSpec::new(a.requests, a.alpha, a.universe, a.seed)
                .with_write_fraction(a.write_frac)
                .with_rate(a.rate),
        )
    };
    let requests = match a.kind {
        GenKind::Zipf => zipf()?,
        GenKind::Correlated => {
            let spec = CorrelatedSpec {
                burst_k: a.burst_k,
                burst_span: a.burst_span,
                fraction: a.fraction,
                seed: a.seed,
            };
            let base = match &a.trace {
                Some(p) => load_path(p, None, false).with_context(|| format!("reading {}", p.display()))?.requests,
                None => zipf()?,
            };
            generate_correlated(&base, &spec)?
        }
    };
    write_trace(&requests, a.format.into(), open_out(&a.out)?)?;
    Ok(true)
}

/// Left-align every CSV column to its widest cell.
fn pretty(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().enumerate().map(|(i, s)| format!("{s:<w$}", w = widths[i])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy)]
enum Plot {
    Bars,
    Curve,
    Nrd,
}

fn plot_script(kind: Plot, data: &Path) -> String {
    let body = match kind {
        Plot::Bars => {
            "for policy, g in df.groupby(\"policy\", sort=False):\n    \
             plt.plot(g.iloc[:, 1].astype(str), g[\"miss_ratio\"], marker=\"o\", label=policy)\n\
             plt.xlabel(\"cache size\")\nplt.ylabel(\"miss ratio\")\n"
        }
        Plot::Curve => {
            "for policy, g in df.groupby(\"policy\", sort=False):\n    \
             plt.plot(g[\"total_blocks\"], g[\"miss_ratio\"], marker=\".\", label=policy)\n\
             plt.xscale(\"log\")\nplt.xlabel(\"cache size (blocks)\")\nplt.ylabel(\"miss ratio\")\n"
        }
        Plot::Nrd => {
            "df = df[df.bin_lo != \"never\"]\n\
             for (policy, dest), g in df.groupby([\"policy\", \"destination\"], sort=False):\n    \
             plt.step(g[\"bin_lo\"].astype(int), g[\"pdf\"], where=\"post\", label=f\"{policy} to {dest}\")\n\
             plt.xscale(\"log\")\nplt.xlabel(\"next reuse distance (requests)\")\nplt.ylabel(\"pdf\")\n"
        }
    };
    format!(
        "import pandas as pd\nimport matplotlib.pyplot as plt\n\ndf = pd.read_csv({:?})\n{body}plt.legend()\nplt.savefig({:?})\n",
        data.display().to_string(),
        data.with_extension("png").display().to_string(),
    )
}
