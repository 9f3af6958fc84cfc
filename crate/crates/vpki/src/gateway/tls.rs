//! Transport security. Service connections run over TLS with the server
//! certificate verified against the deployment's transport root; plaintext
//! is allowed only when the caller explicitly opts out (test and
//! single-machine setups).
//!
//! Transport certificates are ordinary X.509 (separate from the
//! application-layer credential format) so a stock TLS stack can carry the
//! protocol.

use std::sync::Arc;

use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName};
use tokio_rustls::{TlsAcceptor, TlsConnector};

#[derive(Debug, thiserror::Error)]
pub enum TlsError {
    #[error("certificate generation: {0}")]
    Generate(String),
    #[error("bad pem: {0}")]
    BadPem(String),
    #[error("tls config: {0}")]
    Config(String),
}

/// PEM pair for one endpoint.
#[derive(Debug, Clone)]
pub struct PemIdentity {
    pub cert_pem: String,
    pub key_pem: String,
}

/// Generates a transport CA for a deployment.
pub fn generate_transport_ca(name: &str) -> Result<PemIdentity, TlsError> {
    let key = rcgen::KeyPair::generate().map_err(|e| TlsError::Generate(e.to_string()))?;
    let mut params = rcgen::CertificateParams::new(Vec::<String>::new())
        .map_err(|e| TlsError::Generate(e.to_string()))?;
    params.is_ca = rcgen::IsCa::Ca(rcgen::BasicConstraints::Unconstrained);
    params
        .distinguished_name
        .push(rcgen::DnType::CommonName, format!("{name} transport root"));
    let cert = params.self_signed(&key).map_err(|e| TlsError::Generate(e.to_string()))?;
    Ok(PemIdentity { cert_pem: cert.pem(), key_pem: key.serialize_pem() })
}

/// Issues a server certificate under the transport CA, valid for localhost
/// and loopback by default plus any extra names.
pub fn issue_server_identity(
    ca: &PemIdentity,
    service_name: &str,
    extra_sans: &[String],
) -> Result<PemIdentity, TlsError> {
    let ca_key = rcgen::KeyPair::from_pem(&ca.key_pem)
        .map_err(|e| TlsError::BadPem(e.to_string()))?;
    let ca_params = rcgen::CertificateParams::from_ca_cert_pem(&ca.cert_pem)
        .map_err(|e| TlsError::BadPem(e.to_string()))?;
    let ca_cert =
        ca_params.self_signed(&ca_key).map_err(|e| TlsError::Generate(e.to_string()))?;

    let mut sans = vec!["localhost".to_string(), "127.0.0.1".to_string()];
    sans.extend_from_slice(extra_sans);
    let key = rcgen::KeyPair::generate().map_err(|e| TlsError::Generate(e.to_string()))?;
    let mut params =
        rcgen::CertificateParams::new(sans).map_err(|e| TlsError::Generate(e.to_string()))?;
    params.distinguished_name.push(rcgen::DnType::CommonName, service_name.to_string());
    let cert = params
        .signed_by(&key, &ca_cert, &ca_key)
        .map_err(|e| TlsError::Generate(e.to_string()))?;
    Ok(PemIdentity { cert_pem: cert.pem(), key_pem: key.serialize_pem() })
}

fn parse_certs(pem: &str) -> Result<Vec<CertificateDer<'static>>, TlsError> {
    let certs: Result<Vec<_>, _> =
        rustls_pemfile::certs(&mut pem.as_bytes()).collect();
    let certs = certs.map_err(|e| TlsError::BadPem(e.to_string()))?;
    if certs.is_empty() {
        return Err(TlsError::BadPem("no certificates in pem".into()));
    }
    Ok(certs)
}

fn parse_key(pem: &str) -> Result<PrivateKeyDer<'static>, TlsError> {
    rustls_pemfile::private_key(&mut pem.as_bytes())
        .map_err(|e| TlsError::BadPem(e.to_string()))?
        .ok_or_else(|| TlsError::BadPem("no private key in pem".into()))
}

/// Listener-side transport configuration.
#[derive(Clone)]
pub enum ServerTransport {
    /// Explicitly insecure; for tests and local experiments only.
    Plaintext,
    Tls(TlsAcceptor),
}

impl std::fmt::Debug for ServerTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServerTransport::Plaintext => f.write_str("Plaintext"),
            ServerTransport::Tls(_) => f.write_str("Tls"),
        }
    }
}

impl ServerTransport {
    pub fn tls_from_pem(identity: &PemIdentity) -> Result<ServerTransport, TlsError> {
        let config = rustls::ServerConfig::builder()
            .with_no_client_auth()
            .with_single_cert(parse_certs(&identity.cert_pem)?, parse_key(&identity.key_pem)?)
            .map_err(|e| TlsError::Config(e.to_string()))?;
        Ok(ServerTransport::Tls(TlsAcceptor::from(Arc::new(config))))
    }
}

/// Dialer-side transport configuration.
#[derive(Clone)]
pub enum ClientTransport {
    /// Explicitly insecure; for tests and local experiments only.
    Plaintext,
    Tls { connector: TlsConnector, server_name: ServerName<'static> },
}

impl std::fmt::Debug for ClientTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClientTransport::Plaintext => f.write_str("Plaintext"),
            ClientTransport::Tls { server_name, .. } => {
                write!(f, "Tls(server_name={server_name:?})")
            }
        }
    }
}

impl ClientTransport {
    /// Verifies servers against `ca_pem`; connects with `server_name`
    /// (DNS name or IP string, e.g. "127.0.0.1").
    pub fn tls_from_ca_pem(ca_pem: &str, server_name: &str) -> Result<ClientTransport, TlsError> {
        let mut roots = rustls::RootCertStore::empty();
        for cert in parse_certs(ca_pem)? {
            roots.add(cert).map_err(|e| TlsError::Config(e.to_string()))?;
        }
        let config =
            rustls::ClientConfig::builder().with_root_certificates(roots).with_no_client_auth();
        let server_name = ServerName::try_from(server_name.to_string())
            .map_err(|e| TlsError::Config(e.to_string()))?;
        Ok(ClientTransport::Tls {
            connector: TlsConnector::from(Arc::new(config)),
            server_name,
        })
    }
}
