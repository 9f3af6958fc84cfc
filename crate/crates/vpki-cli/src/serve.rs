//! Long-running commands: the three services and the orchestrator.
//!
//! Every service prints `LISTENING <addr>` on stdout once it accepts
//! connections, which is also the handshake the orchestrator's subprocess
//! launcher waits for.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;
use vpki::clock::system_clock;
use vpki::credentials::AuthorityId;
use vpki::gateway::server::{Handler, Server, ShutdownSignal};
use vpki::ltca::{Ltca, LtcaConfig};
use vpki::orchestrator::{
    Deployment, DeploymentConfig, PodConfig, PodHandler, ProxyHandler, SubprocessLauncher,
};
use vpki::pca::{Pca, PcaConfig};
use vpki::ra::{Ra, RaConfig};
use vpki::store::{Store, WriteMode};

use crate::common::{load_cert, load_certs, load_keypair, ServerTlsOpts, UpstreamTlsOpts};

/// Flags shared by every service listener.
#[derive(Debug, Args)]
pub struct ListenOpts {
    /// Address to bind, e.g. 127.0.0.1:7000. Port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:0")]
    pub listen: String,
    #[command(flatten)]
    pub tls: ServerTlsOpts,
    /// Concurrency slots per replica.
    #[arg(long, default_value_t = 4)]
    pub slots: u32,
    /// Synthetic per-request work in milliseconds, for load experiments.
    #[arg(long, default_value_t = 0)]
    pub work_ms: u64,
}

/// Flags shared by the two record-keeping services.
#[derive(Debug, Args)]
pub struct StoreOpts {
    /// Issuance-record store: mem://name or file:///path.
    #[arg(long, default_value = "mem://")]
    pub store: String,
    /// Write discipline for issuance records: strict or async.
    #[arg(long, default_value = "strict")]
    pub write_mode: String,
    /// Flush delay in milliseconds when --write-mode async.
    #[arg(long, default_value_t = 50)]
    pub async_delay_ms: u64,
}

impl StoreOpts {
    fn open(&self) -> Result<Store> {
        let mode = WriteMode::parse(&self.write_mode, self.async_delay_ms)
            .ok_or_else(|| anyhow::anyhow!("--write-mode must be strict or async"))?;
        Store::open(&self.store, mode).map_err(|e| anyhow::anyhow!("{}: {e}", self.store))
    }
}

#[derive(Debug, Args)]
pub struct LtcaArgs {
    #[command(flatten)]
    pub listen: ListenOpts,
    #[command(flatten)]
    pub store: StoreOpts,
    /// LTCA identifier; must match the id in its certificate.
    #[arg(long, default_value = "ltca-1")]
    pub id: String,
    /// LTCA signing key file.
    #[arg(long)]
    pub key: PathBuf,
    /// LTCA certificate file.
    #[arg(long)]
    pub cert: PathBuf,
    /// Trust anchors for verifying RA credentials on revocation requests.
    #[arg(long, value_delimiter = ',')]
    pub anchors: Vec<PathBuf>,
    /// Pseudonym lifetime in seconds; ticket windows tile in these steps.
    #[arg(long, default_value_t = 300)]
    pub tau_p: u64,
    /// Maximum ticket window length in seconds.
    #[arg(long, default_value_t = 86_400)]
    pub window_cap: u64,
}

pub async fn run_ltca(args: &LtcaArgs) -> Result<()> {
    let key = load_keypair(&args.key)?;
    let cert = load_cert(&args.cert)?;
    let anchors = load_certs(&args.anchors)?;
    let mut cfg = LtcaConfig::new(&*args.id, args.tau_p);
    cfg.window_cap = args.window_cap;
    let ltca = Ltca::new(cfg, key, cert, anchors, args.store.open()?, system_clock());
    serve(&args.listen, ltca).await
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub listen: ListenOpts,
    #[command(flatten)]
    pub store: StoreOpts,
    /// PCA identifier; must match the id in its certificate.
    #[arg(long, default_value = "pca-1")]
    pub id: String,
    /// PCA signing key file.
    #[arg(long)]
    pub key: PathBuf,
    /// PCA certificate file.
    #[arg(long)]
    pub cert: PathBuf,
    /// Certificate of the LTCA whose tickets this PCA accepts.
    #[arg(long)]
    pub ltca_cert: PathBuf,
    /// Trust anchors for verifying RA credentials.
    #[arg(long, value_delimiter = ',')]
    pub anchors: Vec<PathBuf>,
}

pub async fn run_pca(args: &PcaArgs) -> Result<()> {
    let key = load_keypair(&args.key)?;
    let cert = load_cert(&args.cert)?;
    let ltca_cert = load_cert(&args.ltca_cert)?;
    let anchors = load_certs(&args.anchors)?;
    let cfg = PcaConfig { authority_id: AuthorityId::new(&*args.id) };
    let pca = Pca::new(cfg, key, cert, ltca_cert, anchors, args.store.open()?, system_clock());
    serve(&args.listen, pca).await
}

#[derive(Debug, Args)]
pub struct RaArgs {
    #[command(flatten)]
    pub listen: ListenOpts,
    /// RA identifier; must match the id in its certificate.
    #[arg(long, default_value = "ra-1")]
    pub id: String,
    /// RA signing key file.
    #[arg(long)]
    pub key: PathBuf,
    /// RA certificate file.
    #[arg(long)]
    pub cert: PathBuf,
    /// LTCA service address.
    #[arg(long)]
    pub ltca_addr: String,
    /// PCA service addresses as id=addr, e.g. pca-1=127.0.0.1:7001.
    #[arg(long, value_delimiter = ',')]
    pub pca: Vec<String>,
    #[command(flatten)]
    pub upstream_tls: UpstreamTlsOpts,
    /// Deadline for calls to the LTCA and PCAs, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    pub call_deadline_ms: u64,
}

pub async fn run_ra(args: &RaArgs) -> Result<()> {
    let key = load_keypair(&args.key)?;
    let cert = load_cert(&args.cert)?;
    let mut pca_addrs = Vec::new();
    for entry in &args.pca {
        let (id, addr) = entry
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--pca wants id=addr, got `{entry}`"))?;
        pca_addrs.push((AuthorityId::new(id), addr.to_string()));
    }
    if pca_addrs.is_empty() {
        bail!("at least one --pca id=addr is required");
    }
    let cfg = RaConfig {
        authority_id: AuthorityId::new(&*args.id),
        ltca_addr: args.ltca_addr.clone(),
        pca_addrs,
        call_deadline: Duration::from_millis(args.call_deadline_ms),
    };
    let ra = Ra::new(cfg, key, cert, args.upstream_tls.transport()?);
    serve(&args.listen, ra).await
}

/// Bind, announce, and run until ctrl-c or a wire shutdown request.
async fn serve(opts: &ListenOpts, inner: Arc<dyn Handler>) -> Result<()> {
    let shutdown = ShutdownSignal::new();
    let pod_cfg =
        PodConfig { concurrency_slots: opts.slots, synthetic_work_ms: opts.work_ms };
    let handler = PodHandler::new(inner, pod_cfg, shutdown.clone());
    let server = Server::bind(&opts.listen, opts.tls.transport()?, handler, shutdown.clone())
        .await
        .with_context(|| format!("binding {}", opts.listen))?;
    announce(server.local_addr());
    tokio::select! {
        _ = tokio::signal::ctrl_c() => server.stop(true).await,
        _ = shutdown.wait_triggered() => server.finished().await,
    }
    Ok(())
}

fn announce(addr: std::net::SocketAddr) {
    println!("LISTENING {addr}");
    std::io::stdout().flush().ok();
}

/// On-disk orchestrator configuration.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestrateFile {
    /// Front-door bind address.
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Scaling-event log (ndjson), if wanted.
    pub events: Option<PathBuf>,
    /// Forwarding deadline for proxied requests, in milliseconds.
    #[serde(default = "default_forward_ms")]
    pub forward_deadline_ms: u64,
    pub deployment: DeploymentConfig,
    pub pod: PodTemplate,
}

fn default_listen() -> String {
    "127.0.0.1:0".to_string()
}

fn default_forward_ms() -> u64 {
    10_000
}

/// Command template for launching replicas. `{pod_id}` in any argument is
/// replaced with the replica's name. Pods must print `LISTENING <addr>`
/// on stdout once bound.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodTemplate {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Args)]
pub struct OrchestrateArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub tls: ServerTlsOpts,
    #[command(flatten)]
    pub pod_tls: UpstreamTlsOpts,
}

pub async fn run_orchestrate(args: &OrchestrateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let file: OrchestrateFile = toml::from_str(&text)
        .with_context(|| format!("parsing {}", args.config.display()))?;

    let event_sink: Option<Box<dyn Write + Send>> = match &file.events {
        Some(path) => Some(Box::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => None,
    };
    let launcher =
        SubprocessLauncher::new(PathBuf::from(&file.pod.program), file.pod.args.clone());
    let deployment = Deployment::new(
        file.deployment.clone(),
        Box::new(launcher),
        args.pod_tls.transport()?,
        event_sink,
    )
    .await?;

    let front = ProxyHandler::new(
        deployment.clone(),
        Duration::from_millis(file.forward_deadline_ms),
    );
    let shutdown = ShutdownSignal::new();
    let server = Server::bind(&file.listen, args.tls.transport()?, front, shutdown.clone())
        .await
        .with_context(|| format!("binding {}", file.listen))?;
    announce(server.local_addr());

    let ticker = ShutdownSignal::new();
    let loop_task = tokio::spawn(Deployment::run(deployment.clone(), ticker.clone()));
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = shutdown.wait_triggered() => {}
    }
    ticker.trigger(false);
    loop_task.await.ok();
    deployment.stop_all().await;
    server.stop(true).await;
    Ok(())
}
