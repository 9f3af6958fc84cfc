//! Experiment tooling: trace generation, trace replay, latency analysis,
//! plot-data rendering, and fleet sizing.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde_json::json;
use vpki::bench::{
    cdf, fleet_sizing, gen_trace, ingest_trace, parse_event_log, parse_latency_log, render_cdf_series,
    render_rate, render_staircase, replay, DelayModel, Jitter, ReplayTarget, TraceGenConfig,
    TripLatency, write_trace,
};

use crate::common::ClientTlsOpts;

#[derive(Debug, Subcommand)]
pub enum TraceCmd {
    /// Generate a synthetic full-day commute trace.
    Gen(TraceGenArgs),
}

#[derive(Debug, Args)]
pub struct TraceGenArgs {
    #[arg(long, default_value_t = 1_000)]
    pub trips: u32,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// UTC seconds at the simulated day's midnight.
    #[arg(long, default_value_t = 0)]
    pub day_origin: u64,
    #[arg(long, default_value_t = 600)]
    pub min_trip_s: u64,
    #[arg(long, default_value_t = 5_400)]
    pub max_trip_s: u64,
    /// Trace file to write. Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_trace_gen(args: &TraceGenArgs) -> Result<()> {
    let cfg = TraceGenConfig {
        trips: args.trips,
        seed: args.seed,
        day_origin: args.day_origin,
        min_trip_s: args.min_trip_s,
        max_trip_s: args.max_trip_s,
    };
    let trips = gen_trace(&cfg);
    match &args.out {
        Some(path) => {
            let file = fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            write_trace(&trips, BufWriter::new(file))?;
            eprintln!("wrote {} trips to {}", trips.len(), path.display());
        }
        None => write_trace(&trips, io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trace file (vehicle_id depart_s arrival_s per line).
    #[arg(long)]
    pub trace: PathBuf,
    /// LTCA service address.
    #[arg(long)]
    pub ltca_addr: String,
    /// PCA service address (or orchestrator front door).
    #[arg(long)]
    pub pca_addr: String,
    #[command(flatten)]
    pub tls: ClientTlsOpts,
    #[arg(long, default_value_t = 300)]
    pub tau_p: u64,
    /// Per-leg network delay floor, milliseconds.
    #[arg(long, default_value_t = 0)]
    pub base_ms: u64,
    /// Delay jitter: none, uniform:MAX_MS, or exp:MEAN_MS.
    #[arg(long, default_value = "none")]
    pub jitter: String,
    /// Trace time divided by this factor to set the replay pace.
    #[arg(long, default_value_t = 60.0)]
    pub compression: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub max_in_flight: usize,
    /// Per-call deadline in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    pub call_deadline_ms: u64,
    /// File for per-trip latency records (ndjson). Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_jitter(spec: &str) -> Result<Jitter> {
    if spec == "none" {
        return Ok(Jitter::None);
    }
    let (kind, value) = spec
        .split_once(':')
        .ok_or_else(|| anyhow::anyhow!("--jitter wants none, uniform:MAX_MS, or exp:MEAN_MS"))?;
    let value: u64 = value.parse().with_context(|| format!("jitter value `{value}`"))?;
    match kind {
        "uniform" => Ok(Jitter::UniformJitter { max_ms: value }),
        "exp" => Ok(Jitter::ExponentialJitter { mean_ms: value }),
        other => bail!("unknown jitter kind `{other}`"),
    }
}

pub async fn run_replay(args: &ReplayArgs) -> Result<()> {
    let trips = ingest_trace(&args.trace).map_err(|e| anyhow::anyhow!("{e}"))?;
    let delay = DelayModel { base_ms: args.base_ms, jitter: parse_jitter(&args.jitter)? };
    let mut target = ReplayTarget::new(&*args.ltca_addr, &*args.pca_addr);
    target.transport = args.tls.transport()?;
    target.call_deadline = Duration::from_millis(args.call_deadline_ms);
    target.seed = args.seed;
    target.max_in_flight = args.max_in_flight;

    let records = replay(&trips, args.tau_p, &delay, &target, args.compression)
        .await
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    for record in &records {
        writeln!(out, "{}", serde_json::to_string(record)?)?;
    }
    out.flush()?;

    let ok = records.iter().filter(|r| r.is_ok()).count();
    let issued: u64 = records.iter().map(|r| u64::from(r.pseudonyms)).sum();
    eprintln!(
        "{}",
        json!({
            "trips": records.len(),
            "ok": ok,
            "failed": records.len() - ok,
            "pseudonyms_issued": issued,
        })
    );
    Ok(())
}

fn read_latency_records(path: &PathBuf) -> Result<Vec<TripLatency>> {
    let records = if path.as_os_str() == "-" {
        parse_latency_log(io::stdin().lock())
    } else {
        let file =
            fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        parse_latency_log(io::BufReader::new(file))
    };
    records.map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

#[derive(Debug, Args)]
pub struct CdfArgs {
    /// Latency record file (ndjson), or - for stdin.
    #[arg(long, default_value = "-")]
    pub records: PathBuf,
    /// Percentile points to report.
    #[arg(long, default_value = "50,90,95,99", value_delimiter = ',')]
    pub percentiles: Vec<f64>,
}

pub fn run_cdf(args: &CdfArgs) -> Result<()> {
    let records = read_latency_records(&args.records)?;
    let pairs = cdf(&records, &args.percentiles).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("percentile\tend_to_end_ms");
    for (p, v) in pairs {
        println!("{p}\t{v:.3}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PlotdataArgs {
    /// Scaling-event log (ndjson) to turn into a replica staircase.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Latency record file (ndjson) to turn into CDF and rate series.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Bucket width for the offered-rate overlay, milliseconds.
    #[arg(long, default_value_t = 1_000)]
    pub rate_bucket_ms: u64,
    /// Directory the TSV files are written into.
    #[arg(long, default_value = "plots")]
    pub out: PathBuf,
}

pub fn run_plotdata(args: &PlotdataArgs) -> Result<()> {
    if args.events.is_none() && args.records.is_none() {
        bail!("pass --events and/or --records");
    }
    fs::create_dir_all(&args.out)?;
    let mut written = Vec::new();

    if let Some(path) = &args.events {
        let file =
            fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let events = parse_event_log(io::BufReader::new(file))
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let out = args.out.join("staircase.tsv");
        render_staircase(&events, BufWriter::new(fs::File::create(&out)?))?;
        written.push(out);
    }

    if let Some(path) = &args.records {
        let records = read_latency_records(path)?;
        written.extend(render_cdf_series(&records, &args.out).map_err(|e| anyhow::anyhow!("{e}"))?);
        let starts: Vec<u64> = records.iter().map(|r| r.t_start_unix_ms).collect();
        let out = args.out.join("rate.tsv");
        render_rate(&starts, args.rate_bucket_ms, BufWriter::new(fs::File::create(&out)?))?;
        written.push(out);
    }

    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SizingArgs {
    /// Fleet size in vehicles.
    #[arg(long)]
    pub vehicles: u64,
    /// Average commute hours per vehicle per day.
    #[arg(long, default_value_t = 1.0)]
    pub commute_hours: f64,
    /// Pseudonym lifetime in seconds.
    #[arg(long, default_value_t = 300)]
    pub tau_p: u64,
    /// Operating days per year.
    #[arg(long, default_value_t = 365)]
    pub days: u64,
}

pub fn run_sizing(args: &SizingArgs) -> Result<()> {
    let total = fleet_sizing(args.vehicles, args.commute_hours, args.tau_p, args.days);
    println!("{total}");
    Ok(())
}
