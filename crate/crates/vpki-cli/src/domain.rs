//! `init-domain`: mint a root of trust, authority credentials, and a
//! transport CA so the services can be started straight from files.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use vpki::credentials::{authority_tbs, sign_certificate, AuthorityId, KeyPair, Validity};
use vpki::gateway::tls::{generate_transport_ca, issue_server_identity};

use crate::common::{save_cert, save_keypair, unix_now};

#[derive(Debug, Args)]
pub struct InitDomainArgs {
    /// Directory the key and certificate files are written into.
    #[arg(long, default_value = "domain")]
    pub out: PathBuf,
    /// LTCA identifier.
    #[arg(long, default_value = "ltca-1")]
    pub ltca_id: String,
    /// PCA identifiers; one credential pair is minted per id.
    #[arg(long, default_value = "pca-1", value_delimiter = ',')]
    pub pca_ids: Vec<String>,
    /// RA identifier.
    #[arg(long, default_value = "ra-1")]
    pub ra_id: String,
    /// Authority certificate lifetime in days.
    #[arg(long, default_value_t = 3650)]
    pub validity_days: u64,
    /// Extra DNS names to put on the transport server certificate.
    #[arg(long, value_delimiter = ',')]
    pub san: Vec<String>,
}

pub fn run(args: &InitDomainArgs) -> Result<()> {
    let now = unix_now();
    // Backdate a day so freshly minted certs validate on skewed clocks.
    let validity = Validity::new(now - 86_400, now + args.validity_days * 86_400)
        .map_err(|e| anyhow::anyhow!("validity: {e}"))?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;

    let root_id = AuthorityId::new("root");
    let root_key = KeyPair::generate();
    let root_cert = sign_certificate(
        &root_key,
        authority_tbs(&root_id, root_key.public(), &root_id, validity),
    )
    .map_err(|e| anyhow::anyhow!("signing root: {e}"))?;
    save_keypair(&args.out.join("root.key"), &root_key)?;
    save_cert(&args.out.join("root.cert"), &root_cert)?;

    let issue = |name: &str, id: &AuthorityId| -> Result<()> {
        let key = KeyPair::generate();
        let cert =
            sign_certificate(&root_key, authority_tbs(id, key.public(), &root_id, validity))
                .map_err(|e| anyhow::anyhow!("signing {name}: {e}"))?;
        save_keypair(&args.out.join(format!("{name}.key")), &key)?;
        save_cert(&args.out.join(format!("{name}.cert")), &cert)?;
        println!("issued {name} ({})", id.as_str());
        Ok(())
    };

    issue("ltca", &AuthorityId::new(&args.ltca_id))?;
    for pca_id in &args.pca_ids {
        issue(pca_id, &AuthorityId::new(pca_id))?;
    }
    issue("ra", &AuthorityId::new(&args.ra_id))?;

    // Transport layer: a separate CA for TLS, unrelated to the credential
    // hierarchy above.
    let tls_dir = args.out.join("tls");
    fs::create_dir_all(&tls_dir)?;
    let ca = generate_transport_ca("vpki transport ca")?;
    let server = issue_server_identity(&ca, "vpki service", &args.san)?;
    fs::write(tls_dir.join("ca.pem"), &ca.cert_pem)?;
    fs::write(tls_dir.join("ca.key.pem"), &ca.key_pem)?;
    fs::write(tls_dir.join("server.pem"), &server.cert_pem)?;
    fs::write(tls_dir.join("server.key.pem"), &server.key_pem)?;
    println!("issued transport ca and server identity under {}", tls_dir.display());
    Ok(())
}
