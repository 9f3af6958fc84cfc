//! Shared plumbing: key/certificate file IO, transport flag groups, and
//! small call helpers.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::Args;
use vpki::credentials::{Certificate, KeyPair, Serial};
use vpki::gateway::client::Connection;
use vpki::gateway::tls::{ClientTransport, PemIdentity, ServerTransport};
use vpki::gateway::MsgType;
use vpki::wire::{WireDecode, WireEncode};

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).expect("clock before epoch").as_secs()
}

/// Key files hold the 32-byte private scalar as one hex line.
pub fn load_keypair(path: &Path) -> Result<KeyPair> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bytes = hex::decode(text.trim())
        .with_context(|| format!("{}: not a hex key file", path.display()))?;
    KeyPair::from_private_bytes(&bytes)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn save_keypair(path: &Path, kp: &KeyPair) -> Result<()> {
    fs::write(path, format!("{}\n", hex::encode(kp.private_bytes())))
        .with_context(|| format!("writing {}", path.display()))
}

/// Certificate files hold the canonical wire encoding as one hex line.
pub fn load_cert(path: &Path) -> Result<Certificate> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bytes = hex::decode(text.trim())
        .with_context(|| format!("{}: not a hex certificate file", path.display()))?;
    Certificate::decode(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn save_cert(path: &Path, cert: &Certificate) -> Result<()> {
    fs::write(path, format!("{}\n", hex::encode(cert.encode())))
        .with_context(|| format!("writing {}", path.display()))
}

pub fn load_certs(paths: &[PathBuf]) -> Result<Vec<Certificate>> {
    paths.iter().map(|p| load_cert(p)).collect()
}

pub fn parse_serial(hex_serial: &str) -> Result<Serial> {
    Serial::from_hex(hex_serial.trim())
        .ok_or_else(|| anyhow::anyhow!("`{hex_serial}` is not a 32-hex-digit serial"))
}

/// Listener-side transport selection: TLS identity files, or explicitly
/// insecure plaintext.
#[derive(Debug, Args)]
pub struct ServerTlsOpts {
    /// PEM file with the server certificate chain.
    #[arg(long, requires = "tls_key", conflicts_with = "insecure")]
    pub tls_cert: Option<PathBuf>,
    /// PEM file with the server private key.
    #[arg(long, requires = "tls_cert")]
    pub tls_key: Option<PathBuf>,
    /// Serve plaintext. For tests and local experiments only.
    #[arg(long)]
    pub insecure: bool,
}

impl ServerTlsOpts {
    pub fn transport(&self) -> Result<ServerTransport> {
        if self.insecure {
            return Ok(ServerTransport::Plaintext);
        }
        match (&self.tls_cert, &self.tls_key) {
            (Some(cert), Some(key)) => {
                let identity = PemIdentity {
                    cert_pem: fs::read_to_string(cert)
                        .with_context(|| format!("reading {}", cert.display()))?,
                    key_pem: fs::read_to_string(key)
                        .with_context(|| format!("reading {}", key.display()))?,
                };
                Ok(ServerTransport::tls_from_pem(&identity)?)
            }
            _ => bail!("pass --tls-cert and --tls-key, or opt into plaintext with --insecure"),
        }
    }
}

/// Dialer-side transport selection: a transport CA to verify servers
/// against, or explicitly insecure plaintext.
#[derive(Debug, Args)]
pub struct ClientTlsOpts {
    /// PEM file with the transport CA that signed the servers.
    #[arg(long, conflicts_with = "insecure")]
    pub tls_ca: Option<PathBuf>,
    /// Server name the certificate must match.
    #[arg(long, default_value = "127.0.0.1")]
    pub tls_server_name: String,
    /// Dial plaintext. For tests and local experiments only.
    #[arg(long)]
    pub insecure: bool,
}

impl ClientTlsOpts {
    pub fn transport(&self) -> Result<ClientTransport> {
        dial_transport(self.tls_ca.as_deref(), &self.tls_server_name, self.insecure, "")
    }
}

/// Same choice as [`ClientTlsOpts`] under prefixed flag names, for
/// commands that both listen and dial.
#[derive(Debug, Args)]
pub struct UpstreamTlsOpts {
    /// PEM file with the transport CA that signed the upstream services.
    #[arg(long, conflicts_with = "upstream_insecure")]
    pub upstream_tls_ca: Option<PathBuf>,
    /// Server name upstream certificates must match.
    #[arg(long, default_value = "127.0.0.1")]
    pub upstream_server_name: String,
    /// Dial upstream services in plaintext.
    #[arg(long)]
    pub upstream_insecure: bool,
}

impl UpstreamTlsOpts {
    pub fn transport(&self) -> Result<ClientTransport> {
        dial_transport(
            self.upstream_tls_ca.as_deref(),
            &self.upstream_server_name,
            self.upstream_insecure,
            "upstream-",
        )
    }
}

fn dial_transport(
    ca: Option<&Path>,
    server_name: &str,
    insecure: bool,
    prefix: &str,
) -> Result<ClientTransport> {
    if insecure {
        return Ok(ClientTransport::Plaintext);
    }
    match ca {
        Some(ca) => {
            let pem =
                fs::read_to_string(ca).with_context(|| format!("reading {}", ca.display()))?;
            Ok(ClientTransport::tls_from_ca_pem(&pem, server_name)?)
        }
        None => bail!("pass --{prefix}tls-ca, or opt into plaintext with --{prefix}insecure"),
    }
}

/// One-shot request against a service.
pub async fn call_once<Req: WireEncode, Resp: WireDecode>(
    addr: &str,
    transport: &ClientTransport,
    msg_type: MsgType,
    req: &Req,
) -> Result<Resp> {
    let conn = Connection::connect(addr, transport)
        .await
        .with_context(|| format!("connecting to {addr}"))?;
    conn.call::<Req, Resp>(msg_type, req, Duration::from_secs(10))
        .await
        .map_err(|e| anyhow::anyhow!("{addr}: {e}"))
}
