//! One-shot client commands: vehicle registration and pseudonym
//! acquisition, load generation, RA resolution and revocation, CRL fetch.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Args;
use serde_json::json;
use vpki::client::{
    run_load, Arrival, ClientConfig, LatencyRecord, LoadProfile, LoadTarget, LtcCredential,
    RecordSink, VehicleClient,
};
use vpki::clock::system_clock;
use vpki::credentials::KeyPair;
use vpki::gateway::messages::{
    GetCrlOkBody, GetCrlReq, RegisterVehicleOkBody, RegisterVehicleReq, ResolutionResultBody,
    ResolveReq,
};
use vpki::gateway::MsgType;

use crate::common::{
    call_once, load_cert, load_certs, load_keypair, parse_serial, save_cert, save_keypair,
    unix_now, ClientTlsOpts,
};

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// LTCA service address.
    #[arg(long)]
    pub ltca_addr: String,
    #[command(flatten)]
    pub tls: ClientTlsOpts,
    /// Vehicle identifier to enroll.
    #[arg(long)]
    pub vehicle_id: String,
    /// LTC validity in days from now.
    #[arg(long, default_value_t = 365)]
    pub validity_days: u64,
    /// Directory for the credential files ltc.key and ltc.cert.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub async fn run_register(args: &RegisterArgs) -> Result<()> {
    let key = KeyPair::generate();
    let now = unix_now();
    let req = RegisterVehicleReq {
        vehicle_id: args.vehicle_id.clone(),
        public_key: key.public(),
        start: now - 60,
        end: now + args.validity_days * 86_400,
    };
    let resp: RegisterVehicleOkBody =
        call_once(&args.ltca_addr, &args.tls.transport()?, MsgType::RegisterVehicle, &req).await?;
    fs::create_dir_all(&args.out)?;
    save_keypair(&args.out.join("ltc.key"), &key)?;
    save_cert(&args.out.join("ltc.cert"), &resp.ltc)?;
    println!(
        "{}",
        json!({
            "vehicle_id": args.vehicle_id,
            "ltc_serial": resp.ltc.serial.to_hex(),
            "valid_until": resp.ltc.validity.end,
        })
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct AcquireArgs {
    /// LTCA service address.
    #[arg(long)]
    pub ltca_addr: String,
    /// PCA service address.
    #[arg(long)]
    pub pca_addr: String,
    #[command(flatten)]
    pub tls: ClientTlsOpts,
    /// LTC private key file (from `register`).
    #[arg(long)]
    pub ltc_key: PathBuf,
    /// LTC certificate file (from `register`).
    #[arg(long)]
    pub ltc_cert: PathBuf,
    /// Trust anchors for verifying the returned pseudonym chain.
    #[arg(long, value_delimiter = ',')]
    pub anchors: Vec<PathBuf>,
    /// Trip start, UTC seconds. Defaults to now.
    #[arg(long)]
    pub trip_start: Option<u64>,
    /// Trip duration in seconds.
    #[arg(long, default_value_t = 3600)]
    pub trip_duration: u64,
    /// Pseudonym lifetime in seconds; must match the LTCA's.
    #[arg(long, default_value_t = 300)]
    pub tau_p: u64,
    /// Directory the pseudonym credential files are written into.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub async fn run_acquire(args: &AcquireArgs) -> Result<()> {
    let cred =
        LtcCredential { ltc: load_cert(&args.ltc_cert)?, key: load_keypair(&args.ltc_key)? };
    let anchors = load_certs(&args.anchors)?;
    let mut cfg = ClientConfig::new(&*args.ltca_addr, &*args.pca_addr);
    cfg.transport = args.tls.transport()?;
    let client = VehicleClient::new(cfg, cred, anchors, system_clock());

    let start = args.trip_start.unwrap_or_else(unix_now);
    let result = client
        .acquire(start, start + args.trip_duration, args.tau_p)
        .await
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        for (i, (cert, key)) in result.pseudonyms.iter().enumerate() {
            save_cert(&dir.join(format!("pseudo-{i:03}.cert")), cert)?;
            save_keypair(&dir.join(format!("pseudo-{i:03}.key")), key)?;
        }
    }
    println!(
        "{}",
        json!({
            "pseudonyms": result.pseudonyms.len(),
            "end_to_end_ms": result.end_to_end_ms,
            "ticket_ms": result.step_times.ticket_ms,
            "pseudonym_ms": result.step_times.pseudonym_ms,
            "server_processing_micros": result.server_processing_micros,
            "first_serial": result.pseudonyms.first().map(|(c, _)| c.serial.to_hex()),
        })
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct LoadgenArgs {
    /// LTCA service address.
    #[arg(long)]
    pub ltca_addr: String,
    /// PCA service address (or orchestrator front door).
    #[arg(long)]
    pub pca_addr: String,
    #[command(flatten)]
    pub tls: ClientTlsOpts,
    #[arg(long, default_value_t = 14)]
    pub workers: u32,
    #[arg(long, default_value_t = 80_000)]
    pub requests_per_worker_per_hour: u64,
    #[arg(long, default_value_t = 16)]
    pub streams_per_worker: u32,
    #[arg(long, default_value_t = 100)]
    pub csrs_per_request: u32,
    #[arg(long, default_value_t = 60)]
    pub duration_s: u64,
    /// Arrival process: uniform or poisson.
    #[arg(long, default_value = "uniform")]
    pub arrival: String,
    #[arg(long, default_value_t = 300)]
    pub tau_p: u64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Per-call deadline in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    pub call_deadline_ms: u64,
    /// Generate CSR keypairs outside the measured window.
    #[arg(long)]
    pub keygen_outside_timing: bool,
    /// File for per-request latency records (ndjson). Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub async fn run_loadgen(args: &LoadgenArgs) -> Result<()> {
    let arrival = match args.arrival.as_str() {
        "uniform" => Arrival::Uniform,
        "poisson" => Arrival::Poisson,
        other => anyhow::bail!("--arrival must be uniform or poisson, got `{other}`"),
    };
    let profile = LoadProfile {
        workers: args.workers,
        requests_per_worker_per_hour: args.requests_per_worker_per_hour,
        concurrent_streams_per_worker: args.streams_per_worker,
        csrs_per_request: args.csrs_per_request,
        duration_s: args.duration_s,
        arrival,
    };
    let mut target = LoadTarget::new(&*args.ltca_addr, &*args.pca_addr, args.tau_p);
    target.transport = args.tls.transport()?;
    target.seed = args.seed;
    target.call_deadline = Duration::from_millis(args.call_deadline_ms);
    target.keygen_outside_timing = args.keygen_outside_timing;

    let writer: Box<dyn Write + Send> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(std::io::stdout()),
    };
    let writer = Arc::new(Mutex::new(writer));
    let sink_writer = writer.clone();
    let sink: RecordSink = Arc::new(move |record: LatencyRecord| {
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut w = sink_writer.lock().expect("sink lock");
        writeln!(w, "{line}").ok();
    });

    let summary = run_load(&profile, &target, sink).await.map_err(|e| anyhow::anyhow!("{e}"))?;
    writer.lock().expect("sink lock").flush()?;
    eprintln!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct RaCallArgs {
    /// RA service address.
    #[arg(long)]
    pub ra_addr: String,
    #[command(flatten)]
    pub tls: ClientTlsOpts,
    /// Pseudonym serial, hex.
    pub pseudonym_serial: String,
}

pub async fn run_resolve(args: &RaCallArgs, revoke: bool) -> Result<()> {
    let req = ResolveReq { pseudonym_serial: parse_serial(&args.pseudonym_serial)? };
    let msg_type = if revoke { MsgType::RevokeVehicle } else { MsgType::Resolve };
    let resp: ResolutionResultBody =
        call_once(&args.ra_addr, &args.tls.transport()?, msg_type, &req).await?;
    let r = &resp.result;
    println!(
        "{}",
        json!({
            "pseudonym_serial": r.pseudonym_serial.to_hex(),
            "ticket_id": r.ticket_id.to_hex(),
            "ltc_serial": r.ltc_serial.to_hex(),
            "revoked_pseudonym_serials":
                r.revoked_pseudonym_serials.iter().map(|s| s.to_hex()).collect::<Vec<_>>(),
        })
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct CrlArgs {
    /// PCA service address.
    #[arg(long)]
    pub pca_addr: String,
    #[command(flatten)]
    pub tls: ClientTlsOpts,
}

pub async fn run_crl(args: &CrlArgs) -> Result<()> {
    let resp: GetCrlOkBody =
        call_once(&args.pca_addr, &args.tls.transport()?, MsgType::GetCrl, &GetCrlReq).await?;
    println!(
        "{}",
        json!({
            "issuer_id": resp.crl.issuer_id.as_str(),
            "issued_at": resp.crl.issued_at,
            "revoked_serials":
                resp.crl.revoked_serials.iter().map(|s| s.to_hex()).collect::<Vec<_>>(),
        })
    );
    Ok(())
}
