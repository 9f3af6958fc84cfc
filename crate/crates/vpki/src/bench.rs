//! Trace-driven benchmarking: synthetic trip generation, trace ingestion,
//! compressed-time replay through a per-leg network-delay model, percentile
//! analytics, fleet sizing, and plot-data rendering.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::client::{ClientConfig, LtcCredential, VehicleClient};
use crate::clock::Clock;
use crate::credentials::{KeyPair, Serial};
use crate::gateway::client::Connection;
use crate::gateway::messages::{
    GetServiceInfoReq, RegisterVehicleOkBody, RegisterVehicleReq, ServiceInfoBody,
};
use crate::gateway::tls::ClientTransport;
use crate::gateway::MsgType;
use crate::orchestrator::ScalingEvent;

/// One trip from a mobility trace; times are UTC seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripRecord {
    pub vehicle_id: String,
    pub depart_time: u64,
    pub arrival_time: u64,
}

impl TripRecord {
    pub fn duration_s(&self) -> u64 {
        self.arrival_time - self.depart_time
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("trace is empty")]
    EmptyTrace,
}

/// Reads a trace file: one `vehicle_id depart_s arrival_s` triple per line,
/// whitespace-delimited, `#` comments allowed. Output is sorted by depart
/// time.
pub fn ingest_trace(path: &Path) -> Result<Vec<TripRecord>, TraceError> {
    let file = std::fs::File::open(path)?;
    parse_trace(io::BufReader::new(file))
}

pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<TripRecord>, TraceError> {
    let mut trips = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let parse = |field: &str, what: &str| {
            field.parse::<u64>().map_err(|_| TraceError::Parse {
                line: lineno,
                detail: format!("{what} `{field}` is not an unsigned integer"),
            })
        };
        let mut parts = text.split_whitespace();
        let (Some(id), Some(dep), Some(arr), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(TraceError::Parse {
                line: lineno,
                detail: "expected exactly `vehicle_id depart_s arrival_s`".into(),
            });
        };
        let depart_time = parse(dep, "depart_s")?;
        let arrival_time = parse(arr, "arrival_s")?;
        if arrival_time <= depart_time {
            return Err(TraceError::Parse {
                line: lineno,
                detail: format!("arrival {arrival_time} not after depart {depart_time}"),
            });
        }
        trips.push(TripRecord { vehicle_id: id.to_string(), depart_time, arrival_time });
    }
    if trips.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    trips.sort_by(|a, b| {
        a.depart_time.cmp(&b.depart_time).then_with(|| a.vehicle_id.cmp(&b.vehicle_id))
    });
    Ok(trips)
}

pub fn write_trace<W: Write>(trips: &[TripRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "# vehicle_id depart_s arrival_s")?;
    for t in trips {
        writeln!(w, "{} {} {}", t.vehicle_id, t.depart_time, t.arrival_time)?;
    }
    Ok(())
}

/// Shape of the synthetic full-day trace: two rush-hour peaks over a
/// daytime baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceGenConfig {
    pub trips: u32,
    pub seed: u64,
    /// UTC seconds at the simulated day's midnight.
    pub day_origin: u64,
    pub min_trip_s: u64,
    pub max_trip_s: u64,
}

impl Default for TraceGenConfig {
    fn default() -> Self {
        TraceGenConfig {
            trips: 1_000,
            seed: 7,
            day_origin: 0,
            min_trip_s: 600,
            max_trip_s: 5_400,
        }
    }
}

/// Deterministic synthetic trace: departures drawn from a two-peak diurnal
/// mixture (7-9 am and 5-7 pm rush hours over a 5 am - 11 pm baseline).
pub fn gen_trace(cfg: &TraceGenConfig) -> Vec<TripRecord> {
    assert!(cfg.trips > 0, "trip count must be positive");
    assert!(
        0 < cfg.min_trip_s && cfg.min_trip_s <= cfg.max_trip_s,
        "trip duration bounds must be positive and ordered"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trips = Vec::with_capacity(cfg.trips as usize);
    for i in 0..cfg.trips {
        let pick: f64 = rng.gen();
        let hour_s = if pick < 0.35 {
            gaussian_clamped(&mut rng, 8.0 * 3_600.0, 2_400.0, 5.0 * 3_600.0, 23.0 * 3_600.0)
        } else if pick < 0.70 {
            gaussian_clamped(&mut rng, 18.0 * 3_600.0, 2_400.0, 5.0 * 3_600.0, 23.0 * 3_600.0)
        } else {
            rng.gen_range(5.0 * 3_600.0..23.0 * 3_600.0)
        };
        let depart_time = cfg.day_origin + hour_s as u64;
        let duration = rng.gen_range(cfg.min_trip_s..=cfg.max_trip_s);
        trips.push(TripRecord {
            vehicle_id: format!("veh-{i:06}"),
            depart_time,
            arrival_time: depart_time + duration,
        });
    }
    trips.sort_by(|a, b| {
        a.depart_time.cmp(&b.depart_time).then_with(|| a.vehicle_id.cmp(&b.vehicle_id))
    });
    trips
}

/// Box-Muller normal sample clamped to `[lo, hi]`.
fn gaussian_clamped(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    (mean + sd * z).clamp(lo, hi)
}

// ---- delay model ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jitter {
    None,
    UniformJitter { max_ms: u64 },
    ExponentialJitter { mean_ms: u64 },
}

/// Per-message-leg network delay: a floor plus optional jitter. Stands in
/// for the out-of-scope radio layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub base_ms: u64,
    pub jitter: Jitter,
}

impl DelayModel {
    pub fn zero() -> Self {
        DelayModel { base_ms: 0, jitter: Jitter::None }
    }

    /// One sampled leg delay; always >= base_ms.
    pub fn sample_ms(&self, rng: &mut ChaCha8Rng) -> u64 {
        let extra = match self.jitter {
            Jitter::None => 0,
            Jitter::UniformJitter { max_ms } => rng.gen_range(0..=max_ms),
            Jitter::ExponentialJitter { mean_ms } => {
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                (-(mean_ms as f64) * u.ln()).round() as u64
            }
        };
        self.base_ms + extra
    }

    pub fn sample_legs(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.sample_ms(rng)).collect()
    }
}

// ---- replay ----

/// One replayed acquisition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripLatency {
    pub vehicle_id: String,
    pub t_start_unix_ms: u64,
    pub end_to_end_ms: f64,
    pub tau_p_s: u64,
    /// "ok" or an error tag.
    pub status: String,
    /// Pseudonyms obtained (0 on failure).
    pub pseudonyms: u32,
    /// The four sampled leg delays applied to this request.
    pub leg_delays_ms: Vec<u64>,
}

impl TripLatency {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("invalid replay: {0}")]
    Invalid(String),
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error("setup failed: {0}")]
    Setup(String),
}

pub struct ReplayTarget {
    pub ltca_addr: String,
    pub pca_addr: String,
    pub transport: ClientTransport,
    pub clock: Arc<dyn Clock>,
    pub call_deadline: Duration,
    /// Seed for the delay model's per-trip RNG streams.
    pub seed: u64,
    /// Bound on concurrently in-flight acquisitions.
    pub max_in_flight: usize,
}

impl ReplayTarget {
    pub fn new(ltca_addr: impl Into<String>, pca_addr: impl Into<String>) -> Self {
        ReplayTarget {
            ltca_addr: ltca_addr.into(),
            pca_addr: pca_addr.into(),
            transport: ClientTransport::Plaintext,
            clock: crate::clock::system_clock(),
            call_deadline: Duration::from_secs(30),
            seed: 7,
            max_in_flight: 128,
        }
    }
}

fn unix_ms_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).expect("clock before epoch").as_millis() as u64
}

/// Replays every trip against live services: trips fire at their depart
/// times rebased onto the service clock and compressed by
/// `time_compression`; each acquisition passes through four sampled
/// delay-model legs. Returns one record per trip, in trip order, failures
/// included.
pub async fn replay(
    trips: &[TripRecord],
    tau_p: u64,
    delay: &DelayModel,
    target: &ReplayTarget,
    time_compression: f64,
) -> Result<Vec<TripLatency>, ReplayError> {
    if time_compression < 1.0 || time_compression.is_nan() {
        return Err(ReplayError::Invalid(format!(
            "time_compression {time_compression} must be >= 1"
        )));
    }
    if tau_p == 0 {
        return Err(ReplayError::Invalid("tau_p must be positive".into()));
    }
    if trips.is_empty() {
        return Err(ReplayError::Invalid("no trips".into()));
    }

    for addr in [&target.ltca_addr, &target.pca_addr] {
        Connection::connect(addr, &target.transport)
            .await
            .map_err(|e| ReplayError::TargetUnreachable(format!("{addr}: {e}")))?;
    }

    // Setup: fetch the PCA anchor once and register each distinct vehicle.
    let pca_conn = Connection::connect(&target.pca_addr, &target.transport)
        .await
        .map_err(|e| ReplayError::TargetUnreachable(e.to_string()))?;
    let pca_cert = pca_conn
        .call::<_, ServiceInfoBody>(
            MsgType::GetServiceInfo,
            &GetServiceInfoReq,
            target.call_deadline,
        )
        .await
        .map_err(|e| ReplayError::Setup(format!("pca info: {e}")))?
        .certificate;
    let now = target.clock.now();
    let run_nonce = Serial::random().to_hex();
    let reg_conn = Connection::connect(&target.ltca_addr, &target.transport)
        .await
        .map_err(|e| ReplayError::TargetUnreachable(e.to_string()))?;
    let mut creds: HashMap<&str, Arc<LtcCredential>> = HashMap::new();
    for trip in trips {
        if creds.contains_key(trip.vehicle_id.as_str()) {
            continue;
        }
        let key = KeyPair::generate();
        let req = RegisterVehicleReq {
            // Namespaced per run so the same trace can replay repeatedly
            // against one LTCA.
            vehicle_id: format!("{run_nonce}/{}", trip.vehicle_id),
            public_key: key.public(),
            start: now.saturating_sub(60),
            end: u64::MAX,
        };
        let ltc = reg_conn
            .call::<_, RegisterVehicleOkBody>(MsgType::RegisterVehicle, &req, target.call_deadline)
            .await
            .map_err(|e| ReplayError::Setup(format!("register {}: {e}", trip.vehicle_id)))?
            .ltc;
        creds.insert(&trip.vehicle_id, Arc::new(LtcCredential { ltc, key }));
    }

    let trace_origin = trips.iter().map(|t| t.depart_time).min().expect("nonempty");
    let anchors = vec![pca_cert];
    let gate = Arc::new(tokio::sync::Semaphore::new(target.max_in_flight.max(1)));
    let wall_origin = tokio::time::Instant::now();
    let mut tasks = tokio::task::JoinSet::new();

    for (idx, trip) in trips.iter().enumerate() {
        // Per-trip RNG stream: delay sequences are reproducible regardless
        // of task interleaving.
        let mut rng = ChaCha8Rng::seed_from_u64(target.seed ^ (idx as u64).wrapping_mul(0x9E37));
        let legs_ms = delay.sample_legs(&mut rng, 4);
        let legs = [
            Duration::from_millis(legs_ms[0]),
            Duration::from_millis(legs_ms[1]),
            Duration::from_millis(legs_ms[2]),
            Duration::from_millis(legs_ms[3]),
        ];
        let offset = Duration::from_secs_f64(
            (trip.depart_time - trace_origin) as f64 / time_compression,
        );
        let trip_start = now + (trip.depart_time - trace_origin);
        let trip_end = trip_start + trip.duration_s();
        let vehicle_id = trip.vehicle_id.clone();
        let cred = creds[trip.vehicle_id.as_str()].clone();
        let anchors = anchors.clone();
        let clock = target.clock.clone();
        let gate = gate.clone();
        let mut cfg = ClientConfig::new(target.ltca_addr.clone(), target.pca_addr.clone());
        cfg.transport = target.transport.clone();
        cfg.call_deadline = target.call_deadline;
        tasks.spawn(async move {
            tokio::time::sleep_until(wall_origin + offset).await;
            let _slot = gate.acquire_owned().await.expect("semaphore open");
            let client = VehicleClient::new(cfg, (*cred).clone(), anchors, clock);
            let t_start_unix_ms = unix_ms_now();
            let started = Instant::now();
            let outcome = client.acquire_delayed(trip_start, trip_end, tau_p, legs).await;
            let record = match outcome {
                Ok(r) => TripLatency {
                    vehicle_id,
                    t_start_unix_ms,
                    end_to_end_ms: r.end_to_end_ms,
                    tau_p_s: tau_p,
                    status: "ok".into(),
                    pseudonyms: r.pseudonyms.len() as u32,
                    leg_delays_ms: legs_ms,
                },
                Err(e) => TripLatency {
                    vehicle_id,
                    t_start_unix_ms,
                    end_to_end_ms: started.elapsed().as_secs_f64() * 1e3,
                    tau_p_s: tau_p,
                    status: e.status_tag(),
                    pseudonyms: 0,
                    leg_delays_ms: legs_ms,
                },
            };
            (idx, record)
        });
    }

    let mut indexed = Vec::with_capacity(trips.len());
    while let Some(joined) = tasks.join_next().await {
        indexed.push(joined.expect("replay task must not panic"));
    }
    indexed.sort_by_key(|(idx, _)| *idx);
    Ok(indexed.into_iter().map(|(_, r)| r).collect())
}

// ---- analytics ----

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AnalyzeError {
    #[error("no data")]
    NoData,
}

/// Nearest-rank percentile on a sorted slice: the rank-`ceil(p/100*n)`
/// smallest value (1-based), clamped to the first for p near zero.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    // Multiply before dividing: p * n is exact for integer percentiles,
    // so ranks on exact boundaries (for example p 28 of 75) do not drift
    // up through ceil.
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Exact empirical percentiles of `values` at each requested point.
pub fn percentiles(values: &[f64], points: &[f64]) -> Result<Vec<(f64, f64)>, AnalyzeError> {
    if values.is_empty() {
        return Err(AnalyzeError::NoData);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("latencies are finite"));
    Ok(points.iter().map(|&p| (p, nearest_rank(&sorted, p))).collect())
}

/// Percentile table over the successful records' end-to-end latencies.
pub fn cdf(records: &[TripLatency], points: &[f64]) -> Result<Vec<(f64, f64)>, AnalyzeError> {
    let ok: Vec<f64> = records.iter().filter(|r| r.is_ok()).map(|r| r.end_to_end_ms).collect();
    percentiles(&ok, points)
}

/// Pseudonyms the whole fleet consumes per year:
/// `n_vehicles * ceil(commute_s / tau_p) * days_per_year`.
pub fn fleet_sizing(
    n_vehicles: u64,
    commute_hours_per_day: f64,
    tau_p_s: u64,
    days_per_year: u64,
) -> u128 {
    assert!(n_vehicles > 0 && tau_p_s > 0 && days_per_year > 0, "inputs must be positive");
    assert!(commute_hours_per_day > 0.0, "inputs must be positive");
    // Rounding to whole seconds keeps decimal commute hours exact.
    let commute_s = (commute_hours_per_day * 3_600.0).round() as u64;
    let per_day = commute_s.div_ceil(tau_p_s);
    u128::from(n_vehicles) * u128::from(per_day) * u128::from(days_per_year)
}

// ---- plot data ----

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// Parses a newline-delimited JSON scaling-event log.
pub fn parse_event_log<R: BufRead>(reader: R) -> Result<Vec<ScalingEvent>, PlotError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: ScalingEvent = serde_json::from_str(&line)
            .map_err(|e| PlotError::Parse { line: i + 1, detail: e.to_string() })?;
        events.push(event);
    }
    Ok(events)
}

/// Parses newline-delimited JSON TripLatency records.
pub fn parse_latency_log<R: BufRead>(reader: R) -> Result<Vec<TripLatency>, PlotError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TripLatency = serde_json::from_str(&line)
            .map_err(|e| PlotError::Parse { line: i + 1, detail: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

/// Replica-count staircase: one `t_ms <TAB> replicas` row per scaling
/// event (render with a post-step line style).
pub fn render_staircase<W: Write>(events: &[ScalingEvent], mut w: W) -> io::Result<()> {
    writeln!(w, "t_ms\treplicas\taction\tservice")?;
    for e in events {
        writeln!(w, "{}\t{}\t{}\t{}", e.timestamp_ms, e.replica_count, e.action, e.service)?;
    }
    Ok(())
}

/// Offered-rate overlay: requests per second in fixed buckets.
pub fn render_rate<W: Write>(
    start_times_unix_ms: &[u64],
    bucket_ms: u64,
    mut w: W,
) -> io::Result<()> {
    writeln!(w, "t_ms\trequests_per_s")?;
    if start_times_unix_ms.is_empty() || bucket_ms == 0 {
        return Ok(());
    }
    let lo = *start_times_unix_ms.iter().min().expect("nonempty");
    let hi = *start_times_unix_ms.iter().max().expect("nonempty");
    let buckets = (hi - lo) / bucket_ms + 1;
    let mut counts = vec![0u64; buckets as usize];
    for &t in start_times_unix_ms {
        counts[((t - lo) / bucket_ms) as usize] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let rate = *c as f64 * 1_000.0 / bucket_ms as f64;
        writeln!(w, "{}\t{rate:.3}", lo + i as u64 * bucket_ms)?;
    }
    Ok(())
}

/// One labeled CDF series file per τ_P present in the records; returns the
/// paths written.
pub fn render_cdf_series(
    records: &[TripLatency],
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>, PlotError> {
    let mut by_tau: HashMap<u64, Vec<f64>> = HashMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        by_tau.entry(r.tau_p_s).or_default().push(r.end_to_end_ms);
    }
    let mut taus: Vec<u64> = by_tau.keys().copied().collect();
    taus.sort_unstable();
    let points: Vec<f64> = (1..=100).map(f64::from).collect();
    let mut paths = Vec::new();
    std::fs::create_dir_all(out_dir)?;
    for tau in taus {
        let path = out_dir.join(format!("cdf_tau_{tau}s.tsv"));
        let mut file = std::fs::File::create(&path)?;
        writeln!(file, "percentile\tend_to_end_ms")?;
        let table = percentiles(&by_tau[&tau], &points).expect("group is nonempty");
        for (p, v) in table {
            writeln!(file, "{p}\t{v:.3}")?;
        }
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::gateway::server::{Handler, Server, ShutdownSignal};
    use crate::gateway::tls::ServerTransport;
    use crate::ltca::{Ltca, LtcaConfig};
    use crate::pca::{Pca, PcaConfig};
    use crate::store::{Store, WriteMode};
    use crate::testutil::make_domain;

    const T0: u64 = 1_000_000_200;

    fn trip(id: &str, dep: u64, arr: u64) -> TripRecord {
        TripRecord { vehicle_id: id.into(), depart_time: dep, arrival_time: arr }
    }

    // ---- trace ----

    #[test]
    fn parse_sorts_and_reports_bad_lines() {
        let input = "# comment\nb 20 30\na 10 25\n\nc 10 15\n";
        let trips = parse_trace(io::Cursor::new(input)).unwrap();
        assert_eq!(
            trips,
            vec![trip("a", 10, 25), trip("c", 10, 15), trip("b", 20, 30)],
        );

        let err = parse_trace(io::Cursor::new("a 10 25\nb 30 20\n")).unwrap_err();
        match err {
            TraceError::Parse { line, detail } => {
                assert_eq!(line, 2);
                assert!(detail.contains("arrival"), "{detail}");
            }
            other => panic!("wrong error: {other}"),
        }

        let err = parse_trace(io::Cursor::new("a 10\n")).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
        let err = parse_trace(io::Cursor::new("a ten 20\n")).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 1, .. }));
        assert!(matches!(
            parse_trace(io::Cursor::new("# nothing\n")).unwrap_err(),
            TraceError::EmptyTrace
        ));
    }

    #[test]
    fn generator_roundtrips_losslessly_through_the_file_format() {
        let cfg = TraceGenConfig { trips: 10_000, seed: 42, ..TraceGenConfig::default() };
        let trips = gen_trace(&cfg);
        assert_eq!(trips.len(), 10_000);
        assert_eq!(gen_trace(&cfg), trips, "same seed must give the same trace");
        assert!(trips.windows(2).all(|w| w[0].depart_time <= w[1].depart_time));
        assert!(trips.iter().all(|t| t.arrival_time > t.depart_time));

        let mut buf = Vec::new();
        write_trace(&trips, &mut buf).unwrap();
        let back = parse_trace(io::Cursor::new(buf)).unwrap();
        assert_eq!(back, trips);
    }

    #[test]
    fn generator_has_two_rush_hour_peaks() {
        let trips = gen_trace(&TraceGenConfig { trips: 4_000, ..TraceGenConfig::default() });
        let hour = |t: &TripRecord| (t.depart_time % 86_400) / 3_600;
        let in_rush =
            trips.iter().filter(|t| [7, 8, 17, 18].contains(&hour(t))).count() as f64;
        let morning = trips.iter().filter(|t| hour(t) == 8).count();
        let midday = trips.iter().filter(|t| hour(t) == 12).count();
        assert!(
            in_rush / trips.len() as f64 > 0.45,
            "rush hours hold only {in_rush} of {}",
            trips.len()
        );
        assert!(morning > midday * 2, "8am ({morning}) should dwarf noon ({midday})");
    }

    // ---- delay model ----

    #[test]
    fn sampled_delays_never_undercut_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for jitter in [
            Jitter::None,
            Jitter::UniformJitter { max_ms: 40 },
            Jitter::ExponentialJitter { mean_ms: 25 },
        ] {
            let m = DelayModel { base_ms: 50, jitter };
            let samples = m.sample_legs(&mut rng, 2_000);
            assert!(samples.iter().all(|&d| d >= 50), "{jitter:?} undercut the base");
            if jitter == Jitter::None {
                assert!(samples.iter().all(|&d| d == 50));
            }
        }
        // Uniform jitter stays within base + max.
        let m = DelayModel { base_ms: 10, jitter: Jitter::UniformJitter { max_ms: 5 } };
        assert!(m.sample_legs(&mut rng, 1_000).iter().all(|&d| d <= 15));
    }

    // ---- analytics ----

    #[test]
    fn nearest_rank_on_a_ramp_and_a_singleton() {
        let ramp: Vec<f64> = (1..=100).map(f64::from).collect();
        let table = percentiles(&ramp, &[95.0]).unwrap();
        assert_eq!(table, vec![(95.0, 95.0)]);
        for p in [0.5, 1.0, 37.0, 50.0, 99.0, 100.0] {
            assert_eq!(percentiles(&[7.0], &[p]).unwrap()[0].1, 7.0);
        }
        assert_eq!(percentiles(&[], &[50.0]).unwrap_err(), AnalyzeError::NoData);
    }

    /// Brute-force oracle: smallest value v in the set such that
    /// |{x <= v}| >= ceil(p*n/100), using integer threshold arithmetic.
    fn oracle(values: &[f64], p_int: u32) -> f64 {
        let n = values.len();
        let threshold = ((p_int as usize * n).div_ceil(100)).max(1);
        let mut candidates = values.to_vec();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &v in &candidates {
            if values.iter().filter(|&&x| x <= v).count() >= threshold {
                return v;
            }
        }
        *candidates.last().unwrap()
    }

    #[test]
    fn percentiles_match_brute_force_oracle_on_random_sets_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let n = rng.gen_range(1..=60);
            // Small integer values force ties.
            let values: Vec<f64> =
                (0..n).map(|_| f64::from(rng.gen_range(0..20u32))).collect();
            for p in [1u32, 5, 25, 50, 75, 90, 95, 99, 100] {
                let got = percentiles(&values, &[f64::from(p)]).unwrap()[0].1;
                assert_eq!(got, oracle(&values, p), "p{p} over {values:?}");
            }
        }
    }

    #[test]
    fn percentile_output_is_monotone_in_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1_000.0)).collect();
        let points: Vec<f64> = (1..=100).map(f64::from).collect();
        let table = percentiles(&values, &points).unwrap();
        assert!(table.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn fleet_sizing_examples() {
        assert_eq!(fleet_sizing(350_000_000, 1.0, 300, 365), 1_533_000_000_000);
        assert_eq!(fleet_sizing(1, 1.0, 3_600, 1), 1);
        assert_eq!(fleet_sizing(10, 0.5, 300, 2), 120);
        // Partial slot rounds up: 0.1 h = 360 s = 6 slots of 60 but 2 of 300.
        assert_eq!(fleet_sizing(1, 0.1, 300, 1), 2);
    }

    // ---- plot data ----

    #[test]
    fn staircase_has_steps_exactly_at_event_times() {
        let mk = |t: u64, action: &str, n: usize| ScalingEvent {
            timestamp_ms: t,
            service: "pca".into(),
            action: action.into(),
            pod_id: format!("pca-pod-{n}"),
            replica_count: n,
        };
        let events = vec![mk(10, "spawn", 2), mk(20, "kill", 1)];
        let mut out = Vec::new();
        render_staircase(&events, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "t_ms\treplicas\taction\tservice");
        assert!(lines[1].starts_with("10\t2\tspawn"));
        assert!(lines[2].starts_with("20\t1\tkill"));

        let mut empty = Vec::new();
        render_staircase(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1, "header only");
    }

    #[test]
    fn event_log_roundtrips_through_ndjson() {
        let event = ScalingEvent {
            timestamp_ms: 1_234,
            service: "pca".into(),
            action: "spawn".into(),
            pod_id: "pca-pod-0".into(),
            replica_count: 3,
        };
        let line = serde_json::to_string(&event).unwrap();
        let parsed = parse_event_log(io::Cursor::new(format!("{line}\n{line}\n"))).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[1].replica_count, 3);
        let err = parse_event_log(io::Cursor::new("not json\n")).unwrap_err();
        assert!(matches!(err, PlotError::Parse { line: 1, .. }));
    }

    #[test]
    fn cdf_series_one_file_per_tau() {
        let rec = |tau: u64, ms: f64| TripLatency {
            vehicle_id: "v".into(),
            t_start_unix_ms: 0,
            end_to_end_ms: ms,
            tau_p_s: tau,
            status: "ok".into(),
            pseudonyms: 1,
            leg_delays_ms: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let records =
            vec![rec(60, 10.0), rec(60, 20.0), rec(300, 5.0), rec(300, 6.0)];
        let paths = render_cdf_series(&records, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].file_name().unwrap().to_str().unwrap().contains("60s"));
        assert!(paths[1].file_name().unwrap().to_str().unwrap().contains("300s"));
        let body = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(body.lines().count(), 101, "header plus p1..p100");
    }

    #[test]
    fn rate_overlay_buckets_counts() {
        let starts = vec![1_000, 1_100, 1_900, 2_500];
        let mut out = Vec::new();
        render_rate(&starts, 1_000, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1000\t3.000");
        assert_eq!(lines[2], "2000\t1.000");
    }

    // ---- replay against live services ----

    struct World {
        ltca_addr: String,
        pca_addr: String,
        clock: Arc<ManualClock>,
        servers: Vec<Server>,
    }

    async fn build_world(tau_p: u64) -> World {
        let domain = make_domain();
        let clock = ManualClock::at(T0);
        let anchors = vec![domain.root_cert.clone()];
        let ltca = Ltca::new(
            LtcaConfig::new("ltca", tau_p),
            domain.ltca_key.clone(),
            domain.ltca_cert.clone(),
            anchors.clone(),
            Store::open("mem://", WriteMode::Strict).unwrap(),
            clock.clone(),
        );
        let pca = Pca::new(
            PcaConfig { authority_id: crate::credentials::AuthorityId::new("pca-1") },
            domain.pca_key.clone(),
            domain.pca_cert.clone(),
            domain.ltca_cert.clone(),
            anchors,
            Store::open("mem://", WriteMode::Strict).unwrap(),
            clock.clone(),
        );
        let mut servers = Vec::new();
        let mut addrs = Vec::new();
        for handler in [ltca as Arc<dyn Handler>, pca] {
            let s = Server::bind(
                "127.0.0.1:0",
                ServerTransport::Plaintext,
                handler,
                ShutdownSignal::new(),
            )
            .await
            .unwrap();
            addrs.push(s.local_addr().to_string());
            servers.push(s);
        }
        World { ltca_addr: addrs[0].clone(), pca_addr: addrs[1].clone(), clock, servers }
    }

    async fn teardown(world: World) {
        for s in world.servers {
            s.stop(false).await;
        }
    }

    fn small_trace(n: u32) -> Vec<TripRecord> {
        gen_trace(&TraceGenConfig {
            trips: n,
            seed: 11,
            day_origin: 0,
            min_trip_s: 300,
            max_trip_s: 1_800,
        })
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn zero_delay_replay_serves_every_trip() {
        let world = build_world(300).await;
        let mut target = ReplayTarget::new(world.ltca_addr.clone(), world.pca_addr.clone());
        target.clock = world.clock.clone();
        let trips = small_trace(30);
        // Full-day schedule squeezed to nothing: everything fires at once.
        let records =
            replay(&trips, 300, &DelayModel::zero(), &target, 1e9).await.unwrap();
        assert_eq!(records.len(), 30);
        assert!(records.iter().all(|r| r.is_ok()), "{:?}", records
            .iter()
            .filter(|r| !r.is_ok())
            .map(|r| r.status.clone())
            .collect::<Vec<_>>());
        // Record order matches trip order.
        for (r, t) in records.iter().zip(&trips) {
            assert_eq!(r.vehicle_id, t.vehicle_id);
            assert_eq!(u64::from(r.pseudonyms), t.duration_s().div_ceil(300));
        }
        teardown(world).await;
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn four_legs_of_fifty_ms_floor_the_latency_at_two_hundred() {
        let world = build_world(300).await;
        let mut target = ReplayTarget::new(world.ltca_addr.clone(), world.pca_addr.clone());
        target.clock = world.clock.clone();
        let trips = small_trace(8);
        let delay = DelayModel { base_ms: 50, jitter: Jitter::None };
        let records = replay(&trips, 300, &delay, &target, 1e9).await.unwrap();
        assert!(records.iter().all(|r| r.is_ok()));
        for r in &records {
            assert!(r.end_to_end_ms >= 200.0, "e2e {} under the 4x50ms floor", r.end_to_end_ms);
            assert_eq!(r.leg_delays_ms, vec![50, 50, 50, 50]);
        }
        teardown(world).await;
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn replay_delay_sequences_are_seed_deterministic() {
        let world = build_world(300).await;
        let mut target = ReplayTarget::new(world.ltca_addr.clone(), world.pca_addr.clone());
        target.clock = world.clock.clone();
        target.seed = 1234;
        let trips = small_trace(10);
        let delay = DelayModel { base_ms: 5, jitter: Jitter::UniformJitter { max_ms: 30 } };
        let first = replay(&trips, 300, &delay, &target, 1e9).await.unwrap();
        let second = replay(&trips, 300, &delay, &target, 1e9).await.unwrap();
        let delays = |rs: &[TripLatency]| {
            rs.iter().map(|r| r.leg_delays_ms.clone()).collect::<Vec<_>>()
        };
        assert_eq!(delays(&first), delays(&second));
        // And the jitter actually varies across trips.
        assert!(delays(&first).iter().any(|d| d != &first[0].leg_delays_ms));
        teardown(world).await;
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn simultaneous_departures_all_served() {
        let world = build_world(300).await;
        let mut target = ReplayTarget::new(world.ltca_addr.clone(), world.pca_addr.clone());
        target.clock = world.clock.clone();
        let trips: Vec<TripRecord> =
            (0..12).map(|i| trip(&format!("dup-{i}"), 1_000, 1_600)).collect();
        let records =
            replay(&trips, 300, &DelayModel::zero(), &target, 1.0).await.unwrap();
        assert_eq!(records.len(), 12);
        assert!(records.iter().all(|r| r.is_ok() && r.pseudonyms == 2));
        teardown(world).await;
    }

    #[tokio::test]
    async fn replay_validates_inputs_and_reachability() {
        let target = ReplayTarget::new("127.0.0.1:1", "127.0.0.1:1");
        let trips = vec![trip("a", 0, 600)];
        let err = replay(&trips, 300, &DelayModel::zero(), &target, 0.5).await.unwrap_err();
        assert!(matches!(err, ReplayError::Invalid(_)));
        let err = replay(&[], 300, &DelayModel::zero(), &target, 1.0).await.unwrap_err();
        assert!(matches!(err, ReplayError::Invalid(_)));
        let err = replay(&trips, 300, &DelayModel::zero(), &target, 1.0).await.unwrap_err();
        assert!(matches!(err, ReplayError::TargetUnreachable(_)));
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn issued_pseudonyms_decrease_as_lifetime_grows() {
        let trips = small_trace(40);
        let mut totals = Vec::new();
        for tau in [60u64, 300, 600] {
            let world = build_world(tau).await;
            let mut target = ReplayTarget::new(world.ltca_addr.clone(), world.pca_addr.clone());
            target.clock = world.clock.clone();
            let records =
                replay(&trips, tau, &DelayModel::zero(), &target, 1e9).await.unwrap();
            assert!(records.iter().all(|r| r.is_ok()));
            let issued: u64 = records.iter().map(|r| u64::from(r.pseudonyms)).sum();
            let expected: u64 = trips.iter().map(|t| t.duration_s().div_ceil(tau)).sum();
            assert_eq!(issued, expected, "tau {tau}");
            totals.push(issued);
            teardown(world).await;
        }
        assert!(totals[0] > totals[1] && totals[1] > totals[2], "{totals:?}");
    }
}
