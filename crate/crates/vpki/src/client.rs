//! Vehicle-side client: the two-step ticket-then-pseudonyms acquisition
//! with full client-side chain and slot validation, a pluggable refill
//! policy, and an open-loop load generator.

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::clock::Clock;
use crate::credentials::{
    make_csr, verify_chain, CertKind, Certificate, Csr, KeyPair, PublicKey, Serial,
};
use crate::gateway::client::{CallError, Connection};
use crate::gateway::messages::{
    GetServiceInfoReq, IssuePseudonymsOkBody, IssuePseudonymsReq, IssueTicketOkBody,
    IssueTicketReq, RegisterVehicleOkBody, RegisterVehicleReq, ServiceInfoBody,
};
use crate::gateway::tls::ClientTransport;
use crate::gateway::MsgType;
use crate::ltca::Ticket;

/// The vehicle's enrollment credential: its LTC and the matching key.
#[derive(Debug, Clone)]
pub struct LtcCredential {
    pub ltc: Certificate,
    pub key: KeyPair,
}

/// Which half of the two-step exchange an error belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquireStep {
    Ticket,
    Pseudonym,
}

impl fmt::Display for AcquireStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AcquireStep::Ticket => "ticket",
            AcquireStep::Pseudonym => "pseudonym",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AcquireError {
    /// Rejected before any network call.
    #[error("invalid trip: {0}")]
    InvalidTrip(String),
    #[error("{step} step: {source}")]
    Call { step: AcquireStep, source: CallError },
    /// The service answered but the response failed client-side checks.
    #[error("{step} step rejected by client: {detail}")]
    Rejected { step: AcquireStep, detail: String },
}

impl AcquireError {
    pub fn step(&self) -> Option<AcquireStep> {
        match self {
            AcquireError::InvalidTrip(_) => None,
            AcquireError::Call { step, .. } | AcquireError::Rejected { step, .. } => Some(*step),
        }
    }

    /// Compact tag for latency records, e.g. `ticket:remote:RevokedLtc`.
    pub fn status_tag(&self) -> String {
        match self {
            AcquireError::InvalidTrip(_) => "invalid-trip".to_string(),
            AcquireError::Call { step, source } => match source {
                CallError::Timeout => format!("{step}:timeout"),
                CallError::ConnectionFailed(_) => format!("{step}:unreachable"),
                CallError::Remote { code, .. } => format!("{step}:remote:{code:?}"),
                CallError::Protocol(_) => format!("{step}:protocol"),
            },
            AcquireError::Rejected { step, .. } => format!("{step}:rejected"),
        }
    }
}

/// Per-step wall-clock components of one acquisition.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StepTimes {
    pub ticket_ms: f64,
    pub pseudonym_ms: f64,
}

/// One completed acquisition: every pseudonym chain-verified and slot-checked,
/// each paired with its private key.
pub struct AcquisitionResult {
    pub pseudonyms: Vec<(Certificate, KeyPair)>,
    pub t_request_sent: Instant,
    pub t_response_received: Instant,
    pub end_to_end_ms: f64,
    pub step_times: StepTimes,
    /// Server-reported handler time for the batch, microseconds.
    pub server_processing_micros: u64,
}

// Keys stay out of debug output.
impl fmt::Debug for AcquisitionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AcquisitionResult")
            .field("pseudonyms", &self.pseudonyms.len())
            .field("end_to_end_ms", &self.end_to_end_ms)
            .field("step_times", &self.step_times)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub ltca_addr: String,
    pub pca_addr: String,
    pub transport: ClientTransport,
    pub call_deadline: Duration,
    /// Generate pseudonym keypairs before the measured window starts
    /// instead of inside it (default: inside).
    pub keygen_outside_timing: bool,
}

impl ClientConfig {
    pub fn new(ltca_addr: impl Into<String>, pca_addr: impl Into<String>) -> ClientConfig {
        ClientConfig {
            ltca_addr: ltca_addr.into(),
            pca_addr: pca_addr.into(),
            transport: ClientTransport::Plaintext,
            call_deadline: Duration::from_secs(10),
            keygen_outside_timing: false,
        }
    }
}

#[derive(Default)]
struct Endpoints {
    ltca: Option<Connection>,
    pca: Option<Connection>,
    /// LTCA certificate, fetched once to verify ticket signatures.
    ltca_cert: Option<Certificate>,
    /// PCA authority id and certificate, fetched once.
    pca_info: Option<(String, Certificate)>,
}

/// Decides when and for what window the vehicle tops up its pseudonym pool.
pub trait RefillPolicy: Send + Sync {
    /// Returns the window to acquire for, or None when the current pool
    /// already covers the need.
    fn plan(
        &self,
        now: u64,
        pool: &[Certificate],
        trip_start: u64,
        trip_end: u64,
    ) -> Option<(u64, u64)>;
}

/// Simplest policy: at trip start, request coverage for the whole declared
/// trip unless the pool already covers it without a gap.
pub struct TripCoveragePolicy;

impl RefillPolicy for TripCoveragePolicy {
    fn plan(
        &self,
        now: u64,
        pool: &[Certificate],
        trip_start: u64,
        trip_end: u64,
    ) -> Option<(u64, u64)> {
        let need_from = trip_start.max(now);
        if need_from >= trip_end {
            return None;
        }
        let mut covered_to = need_from;
        while let Some(next) = pool
            .iter()
            .find(|p| p.validity.start <= covered_to && p.validity.end > covered_to)
        {
            covered_to = next.validity.end;
            if covered_to >= trip_end {
                return None;
            }
        }
        Some((covered_to, trip_end))
    }
}

pub struct VehicleClient {
    cfg: ClientConfig,
    cred: LtcCredential,
    trust_anchors: Vec<Certificate>,
    clock: Arc<dyn Clock>,
    endpoints: Mutex<Endpoints>,
}

impl VehicleClient {
    pub fn new(
        cfg: ClientConfig,
        cred: LtcCredential,
        trust_anchors: Vec<Certificate>,
        clock: Arc<dyn Clock>,
    ) -> Arc<VehicleClient> {
        Arc::new(VehicleClient { cfg, cred, trust_anchors, clock, endpoints: Mutex::new(Endpoints::default()) })
    }

    pub fn credential(&self) -> &LtcCredential {
        &self.cred
    }

    async fn connect(&self, addr: &str, step: AcquireStep) -> Result<Connection, AcquireError> {
        Connection::connect(addr, &self.cfg.transport).await.map_err(|e| AcquireError::Call {
            step,
            source: CallError::ConnectionFailed(e.to_string()),
        })
    }

    async fn service_info(
        &self,
        conn: &Connection,
        step: AcquireStep,
    ) -> Result<ServiceInfoBody, AcquireError> {
        conn.call::<_, ServiceInfoBody>(
            MsgType::GetServiceInfo,
            &GetServiceInfoReq,
            self.cfg.call_deadline,
        )
        .await
        .map_err(|source| AcquireError::Call { step, source })
    }

    /// Cached LTCA connection plus the LTCA's verification key.
    async fn ltca(&self) -> Result<(Connection, PublicKey), AcquireError> {
        let mut eps = self.endpoints.lock().await;
        if eps.ltca.as_ref().is_none_or(|c| c.is_closed()) {
            eps.ltca = Some(self.connect(&self.cfg.ltca_addr, AcquireStep::Ticket).await?);
        }
        let conn = eps.ltca.clone().expect("just set");
        if eps.ltca_cert.is_none() {
            let info = self.service_info(&conn, AcquireStep::Ticket).await?;
            eps.ltca_cert = Some(info.certificate);
        }
        let key = eps.ltca_cert.as_ref().expect("just set").subject_public_key;
        Ok((conn, key))
    }

    /// Cached PCA connection plus its authority id and certificate.
    async fn pca(&self) -> Result<(Connection, String, Certificate), AcquireError> {
        let mut eps = self.endpoints.lock().await;
        if eps.pca.as_ref().is_none_or(|c| c.is_closed()) {
            eps.pca = Some(self.connect(&self.cfg.pca_addr, AcquireStep::Pseudonym).await?);
        }
        let conn = eps.pca.clone().expect("just set");
        if eps.pca_info.is_none() {
            let info = self.service_info(&conn, AcquireStep::Pseudonym).await?;
            eps.pca_info = Some((info.authority_id, info.certificate));
        }
        let (id, cert) = eps.pca_info.clone().expect("just set");
        Ok((conn, id, cert))
    }

    /// Acquires pseudonyms covering `[trip_start, trip_end)`: obtains a
    /// single-use ticket from the LTCA, generates one keypair and CSR per
    /// lifetime slot, submits the batch to the PCA, and verifies every
    /// returned chain and slot assignment before accepting.
    pub async fn acquire(
        &self,
        trip_start: u64,
        trip_end: u64,
        tau_p: u64,
    ) -> Result<AcquisitionResult, AcquireError> {
        self.acquire_delayed(trip_start, trip_end, tau_p, [Duration::ZERO; 4]).await
    }

    /// `acquire` with four injected network-leg delays (ticket request,
    /// ticket response, batch request, batch response), all inside the
    /// measured window. Stands in for the radio link during trace replay.
    pub async fn acquire_delayed(
        &self,
        trip_start: u64,
        trip_end: u64,
        tau_p: u64,
        legs: [Duration; 4],
    ) -> Result<AcquisitionResult, AcquireError> {
        if trip_start >= trip_end {
            return Err(AcquireError::InvalidTrip(format!(
                "trip_start {trip_start} must precede trip_end {trip_end}"
            )));
        }
        if tau_p == 0 {
            return Err(AcquireError::InvalidTrip("pseudonym lifetime must be positive".into()));
        }
        let duration = trip_end - trip_start;
        let n = usize::try_from(duration.div_ceil(tau_p))
            .map_err(|_| AcquireError::InvalidTrip("trip needs too many pseudonyms".into()))?;

        // Connection setup and service-info discovery happen before the
        // measured window: the metric is the request/response exchange.
        let (ltca, ltca_key) = self.ltca().await?;
        let (pca, pca_id, pca_cert) = self.pca().await?;
        let pregen: Option<Vec<KeyPair>> = self
            .cfg
            .keygen_outside_timing
            .then(|| (0..n).map(|_| KeyPair::generate()).collect());

        async fn leg(d: Duration) {
            if !d.is_zero() {
                tokio::time::sleep(d).await;
            }
        }

        let t_request_sent = Instant::now();

        // Step 1: single-use authorization ticket from the LTCA.
        let auth =
            IssueTicketReq::auth_bytes(trip_start, duration, &pca_id, self.cred.ltc.serial);
        let req = IssueTicketReq {
            start: trip_start,
            duration,
            target_pca_id: pca_id.clone(),
            ltc_serial: self.cred.ltc.serial,
            signature: self.cred.key.sign(&auth),
        };
        leg(legs[0]).await;
        let ticket = ltca
            .call::<_, IssueTicketOkBody>(MsgType::IssueTicket, &req, self.cfg.call_deadline)
            .await
            .map_err(|source| AcquireError::Call { step: AcquireStep::Ticket, source })?
            .ticket;
        leg(legs[1]).await;
        self.check_ticket(&ticket, &ltca_key, &pca_id, trip_start, trip_end, tau_p, n)?;
        let t_ticket_done = Instant::now();

        // Step 2: fresh keypair per slot, one CSR batch.
        let keys = pregen.unwrap_or_else(|| (0..n).map(|_| KeyPair::generate()).collect());
        let csrs: Vec<Csr> = keys.iter().map(make_csr).collect();
        leg(legs[2]).await;
        let resp = pca
            .call::<_, IssuePseudonymsOkBody>(
                MsgType::IssuePseudonyms,
                &IssuePseudonymsReq { ticket: ticket.clone(), csrs: csrs.clone() },
                self.cfg.call_deadline,
            )
            .await
            .map_err(|source| AcquireError::Call { step: AcquireStep::Pseudonym, source })?;
        leg(legs[3]).await;
        let t_response_received = Instant::now();

        self.check_batch(&resp.pseudonyms, &csrs, &ticket, tau_p, &pca_cert)?;

        let step_times = StepTimes {
            ticket_ms: (t_ticket_done - t_request_sent).as_secs_f64() * 1e3,
            pseudonym_ms: (t_response_received - t_ticket_done).as_secs_f64() * 1e3,
        };
        Ok(AcquisitionResult {
            pseudonyms: resp.pseudonyms.into_iter().zip(keys).collect(),
            t_request_sent,
            t_response_received,
            end_to_end_ms: (t_response_received - t_request_sent).as_secs_f64() * 1e3,
            step_times,
            server_processing_micros: resp.processing_micros,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn check_ticket(
        &self,
        ticket: &Ticket,
        ltca_key: &PublicKey,
        pca_id: &str,
        trip_start: u64,
        trip_end: u64,
        tau_p: u64,
        n: usize,
    ) -> Result<(), AcquireError> {
        let reject = |detail: String| AcquireError::Rejected { step: AcquireStep::Ticket, detail };
        ticket
            .verify(ltca_key)
            .map_err(|e| reject(format!("ticket signature does not verify: {e}")))?;
        if ticket.target_pca_id.as_str() != pca_id {
            return Err(reject(format!(
                "ticket targets {} instead of {pca_id}",
                ticket.target_pca_id.as_str()
            )));
        }
        if ticket.t_s > trip_start || ticket.t_e < trip_end {
            return Err(reject(format!(
                "ticket window [{}, {}) does not cover trip [{trip_start}, {trip_end})",
                ticket.t_s, ticket.t_e
            )));
        }
        let slots = u64::from(ticket.max_pseudonyms);
        if slots * tau_p != ticket.t_e - ticket.t_s {
            return Err(reject(format!(
                "window [{}, {}) is not {slots} slots of {tau_p}s",
                ticket.t_s, ticket.t_e
            )));
        }
        if slots < n as u64 {
            return Err(reject(format!("ticket allows {slots} pseudonyms, trip needs {n}")));
        }
        Ok(())
    }

    fn check_batch(
        &self,
        pseudonyms: &[Certificate],
        csrs: &[Csr],
        ticket: &Ticket,
        tau_p: u64,
        pca_cert: &Certificate,
    ) -> Result<(), AcquireError> {
        let reject =
            |detail: String| AcquireError::Rejected { step: AcquireStep::Pseudonym, detail };
        if pseudonyms.len() != csrs.len() {
            return Err(reject(format!(
                "asked for {} pseudonyms, got {}",
                csrs.len(),
                pseudonyms.len()
            )));
        }
        let mut seen_keys: HashSet<[u8; 33]> = HashSet::new();
        let mut seen_serials: HashSet<Serial> = HashSet::new();
        let intermediates = [pca_cert.clone()];
        for (i, (p, csr)) in pseudonyms.iter().zip(csrs).enumerate() {
            if p.kind != CertKind::Pseudonym {
                return Err(reject(format!("slot {i}: not a pseudonym certificate")));
            }
            if p.subject_public_key != csr.subject_public_key {
                return Err(reject(format!("slot {i}: certified key is not the CSR key")));
            }
            if !seen_keys.insert(p.subject_public_key.0) {
                return Err(reject(format!("slot {i}: key certified twice in one batch")));
            }
            if !seen_serials.insert(p.serial) {
                return Err(reject(format!("slot {i}: duplicate serial")));
            }
            if p.subject_id.is_some() {
                return Err(reject(format!("slot {i}: pseudonym carries an identity")));
            }
            let slot_start = ticket.t_s + i as u64 * tau_p;
            if p.validity.start != slot_start || p.validity.end != slot_start + tau_p {
                return Err(reject(format!(
                    "slot {i}: validity [{}, {}) is not [{slot_start}, {})",
                    p.validity.start,
                    p.validity.end,
                    slot_start + tau_p
                )));
            }
            verify_chain(p, &intermediates, &self.trust_anchors, p.validity.start)
                .map_err(|e| reject(format!("slot {i}: chain does not verify: {e}")))?;
        }
        Ok(())
    }

    /// Acquires only what the refill policy says is missing; None means the
    /// pool already covers the trip.
    pub async fn refill(
        &self,
        policy: &dyn RefillPolicy,
        pool: &[Certificate],
        trip_start: u64,
        trip_end: u64,
        tau_p: u64,
    ) -> Result<Option<AcquisitionResult>, AcquireError> {
        match policy.plan(self.clock.now(), pool, trip_start, trip_end) {
            None => Ok(None),
            Some((from, to)) => self.acquire(from, to, tau_p).await.map(Some),
        }
    }
}

// ---- load generation ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    Uniform,
    Poisson,
}

/// Workload shape for one load-generation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadProfile {
    pub workers: u32,
    pub requests_per_worker_per_hour: u64,
    pub concurrent_streams_per_worker: u32,
    pub csrs_per_request: u32,
    pub duration_s: u64,
    pub arrival: Arrival,
}

impl LoadProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be positive".into());
        }
        if self.requests_per_worker_per_hour == 0 {
            return Err("requests_per_worker_per_hour must be positive".into());
        }
        if self.concurrent_streams_per_worker == 0 {
            return Err("concurrent_streams_per_worker must be positive".into());
        }
        if self.csrs_per_request == 0 {
            return Err("csrs_per_request must be positive".into());
        }
        if self.duration_s == 0 {
            return Err("duration_s must be positive".into());
        }
        Ok(())
    }

    /// Deterministic request count for one worker under Uniform arrivals.
    pub fn requests_per_worker(&self) -> u64 {
        self.requests_per_worker_per_hour * self.duration_s / 3600
    }

    pub fn offered_rate_hz(&self) -> f64 {
        u64::from(self.workers) as f64 * self.requests_per_worker_per_hour as f64 / 3600.0
    }
}

/// One line of load-generator output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub seq: u64,
    pub t_start_unix_ms: u64,
    pub end_to_end_ms: f64,
    pub step_times: StepTimes,
    /// "ok" or an error tag such as `ticket:timeout`.
    pub status: String,
}

impl LatencyRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Where the load goes and how trips are shaped.
pub struct LoadTarget {
    pub ltca_addr: String,
    pub pca_addr: String,
    pub transport: ClientTransport,
    pub tau_p: u64,
    pub clock: Arc<dyn Clock>,
    /// Seed for arrival-schedule randomness (Poisson gaps).
    pub seed: u64,
    pub call_deadline: Duration,
    pub keygen_outside_timing: bool,
}

impl LoadTarget {
    pub fn new(ltca_addr: impl Into<String>, pca_addr: impl Into<String>, tau_p: u64) -> Self {
        LoadTarget {
            ltca_addr: ltca_addr.into(),
            pca_addr: pca_addr.into(),
            transport: ClientTransport::Plaintext,
            tau_p,
            clock: crate::clock::system_clock(),
            seed: 7,
            call_deadline: Duration::from_secs(10),
            keygen_outside_timing: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error("setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct LoadSummary {
    pub scheduled: u64,
    pub completed: u64,
    pub ok: u64,
    pub failed: u64,
    pub elapsed_s: f64,
    /// completed / elapsed_s.
    pub achieved_rate_hz: f64,
}

/// Concurrent-writer-safe destination for latency records.
pub type RecordSink = Arc<dyn Fn(LatencyRecord) + Send + Sync>;

fn unix_ms_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).expect("clock before epoch").as_millis() as u64
}

/// Send offsets (seconds from run start) for one worker.
fn arrival_schedule(profile: &LoadProfile, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gap = 3600.0 / profile.requests_per_worker_per_hour as f64;
    match profile.arrival {
        Arrival::Uniform => {
            (0..profile.requests_per_worker()).map(|k| k as f64 * gap).collect()
        }
        Arrival::Poisson => {
            let horizon = profile.duration_s as f64;
            let mut t = 0.0;
            let mut out = Vec::new();
            loop {
                // Inverse-CDF exponential gap with mean `gap`.
                let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                t += -gap * u.ln();
                if t >= horizon {
                    return out;
                }
                out.push(t);
            }
        }
    }
}

/// Registers one vehicle per worker, then drives the profile open-loop:
/// each worker fires requests at its arrival schedule, bounded by its
/// stream count, and every scheduled request produces exactly one record.
pub async fn run_load(
    profile: &LoadProfile,
    target: &LoadTarget,
    sink: RecordSink,
) -> Result<LoadSummary, LoadError> {
    profile.validate().map_err(LoadError::InvalidProfile)?;

    // Preflight both targets so an unreachable service fails at startup
    // instead of producing a run of connection errors.
    for addr in [&target.ltca_addr, &target.pca_addr] {
        Connection::connect(addr, &target.transport)
            .await
            .map_err(|e| LoadError::TargetUnreachable(format!("{addr}: {e}")))?;
    }

    // Registration is setup, not load: one vehicle per worker.
    let now = target.clock.now();
    let run_nonce = Serial::random().to_hex();
    let reg_conn = Connection::connect(&target.ltca_addr, &target.transport)
        .await
        .map_err(|e| LoadError::TargetUnreachable(e.to_string()))?;
    let mut clients = Vec::new();
    for w in 0..profile.workers {
        let key = KeyPair::generate();
        let req = RegisterVehicleReq {
            vehicle_id: format!("loadgen-{run_nonce}-{w}"),
            public_key: key.public(),
            start: now.saturating_sub(60),
            end: now + profile.duration_s + 86_400,
        };
        let ltc = reg_conn
            .call::<_, RegisterVehicleOkBody>(MsgType::RegisterVehicle, &req, target.call_deadline)
            .await
            .map_err(|e| LoadError::Setup(format!("register worker {w}: {e}")))?
            .ltc;
        let mut cfg = ClientConfig::new(target.ltca_addr.clone(), target.pca_addr.clone());
        cfg.transport = target.transport.clone();
        cfg.call_deadline = target.call_deadline;
        cfg.keygen_outside_timing = target.keygen_outside_timing;
        // Trust anchor discovery is deployment-specific; for load purposes
        // the client trusts the PCA certificate it fetched, so anchor the
        // chain there.
        let pca_conn = Connection::connect(&target.pca_addr, &target.transport)
            .await
            .map_err(|e| LoadError::TargetUnreachable(e.to_string()))?;
        let info = pca_conn
            .call::<_, ServiceInfoBody>(
                MsgType::GetServiceInfo,
                &GetServiceInfoReq,
                target.call_deadline,
            )
            .await
            .map_err(|e| LoadError::Setup(format!("pca info: {e}")))?;
        let client = VehicleClient::new(
            cfg,
            LtcCredential { ltc, key },
            vec![info.certificate],
            target.clock.clone(),
        );
        clients.push(client);
    }

    let seq = Arc::new(AtomicU64::new(0));
    let completed = Arc::new(AtomicU64::new(0));
    let ok = Arc::new(AtomicU64::new(0));
    let started = Instant::now();
    let origin = tokio::time::Instant::now();
    let mut scheduled_total = 0u64;
    let mut workers = tokio::task::JoinSet::new();

    for (w, client) in clients.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(target.seed.wrapping_add(w as u64));
        let schedule = arrival_schedule(profile, &mut rng);
        scheduled_total += schedule.len() as u64;
        let streams = Arc::new(tokio::sync::Semaphore::new(
            profile.concurrent_streams_per_worker as usize,
        ));
        let (seq, completed, ok, sink) =
            (seq.clone(), completed.clone(), ok.clone(), sink.clone());
        let (tau_p, csrs, clock) =
            (target.tau_p, u64::from(profile.csrs_per_request), target.clock.clone());
        workers.spawn(async move {
            let mut requests = tokio::task::JoinSet::new();
            for offset in schedule {
                tokio::time::sleep_until(origin + Duration::from_secs_f64(offset)).await;
                let permit = streams.clone().acquire_owned().await.expect("semaphore open");
                let (client, seq, completed, ok, sink, clock) = (
                    client.clone(),
                    seq.clone(),
                    completed.clone(),
                    ok.clone(),
                    sink.clone(),
                    clock.clone(),
                );
                requests.spawn(async move {
                    let _permit = permit;
                    let n = seq.fetch_add(1, Ordering::Relaxed);
                    let t_start_unix_ms = unix_ms_now();
                    let trip_start = clock.now();
                    let outcome = client.acquire(trip_start, trip_start + csrs * tau_p, tau_p).await;
                    let record = match &outcome {
                        Ok(r) => LatencyRecord {
                            seq: n,
                            t_start_unix_ms,
                            end_to_end_ms: r.end_to_end_ms,
                            step_times: r.step_times,
                            status: "ok".to_string(),
                        },
                        Err(e) => LatencyRecord {
                            seq: n,
                            t_start_unix_ms,
                            end_to_end_ms: 0.0,
                            step_times: StepTimes::default(),
                            status: e.status_tag(),
                        },
                    };
                    if record.is_ok() {
                        ok.fetch_add(1, Ordering::Relaxed);
                    }
                    completed.fetch_add(1, Ordering::Relaxed);
                    sink(record);
                });
            }
            while requests.join_next().await.is_some() {}
        });
    }
    while workers.join_next().await.is_some() {}

    let elapsed_s = started.elapsed().as_secs_f64();
    let completed = completed.load(Ordering::Relaxed);
    let ok = ok.load(Ordering::Relaxed);
    Ok(LoadSummary {
        scheduled: scheduled_total,
        completed,
        ok,
        failed: completed - ok,
        elapsed_s,
        achieved_rate_hz: completed as f64 / elapsed_s,
    })
}
