//! Shared fixture for the integration suites: a full authority domain
//! with LTCA, PCA, and RA listening on loopback sockets.

#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use vpki::client::LtcCredential;
use vpki::clock::ManualClock;
use vpki::credentials::{
    authority_tbs, sign_certificate, AuthorityId, Certificate, KeyPair, Validity,
};
use vpki::gateway::client::Connection;
use vpki::gateway::messages::{
    IssueTicketOkBody, IssueTicketReq, RegisterVehicleOkBody, RegisterVehicleReq,
};
use vpki::gateway::server::{Handler, Server, ShutdownSignal};
use vpki::gateway::tls::{ClientTransport, ServerTransport};
use vpki::gateway::MsgType;
use vpki::ltca::{Ltca, LtcaConfig, Ticket};
use vpki::pca::{Pca, PcaConfig};
use vpki::ra::{Ra, RaConfig};
use vpki::store::{Store, WriteMode};

/// Fixture epoch, divisible by 600 so windows for every lifetime used in
/// the suites start exactly here.
pub const T0: u64 = 1_700_000_400;

pub const DEADLINE: Duration = Duration::from_secs(10);

pub fn store_uri(label: &str) -> String {
    static NEXT: AtomicU64 = AtomicU64::new(0);
    format!("mem://{label}-{}-{}", std::process::id(), NEXT.fetch_add(1, Ordering::Relaxed))
}

/// Root plus per-authority credentials, all valid around [`T0`].
pub struct AuthoritySet {
    pub root_key: KeyPair,
    pub root_cert: Certificate,
    pub ltca_key: KeyPair,
    pub ltca_cert: Certificate,
    pub pca_key: KeyPair,
    pub pca_cert: Certificate,
    pub ra_key: KeyPair,
    pub ra_cert: Certificate,
}

pub fn authority_set() -> AuthoritySet {
    let validity = Validity::new(T0 - 86_400, T0 + 10 * 365 * 86_400).unwrap();
    let root_id = AuthorityId::new("root");
    let root_key = KeyPair::generate();
    let root_cert = sign_certificate(
        &root_key,
        authority_tbs(&root_id, root_key.public(), &root_id, validity),
    )
    .unwrap();
    let issue = |id: &str, key: &KeyPair| {
        sign_certificate(
            &root_key,
            authority_tbs(&AuthorityId::new(id), key.public(), &root_id, validity),
        )
        .unwrap()
    };
    let ltca_key = KeyPair::generate();
    let ltca_cert = issue("ltca-1", &ltca_key);
    let pca_key = KeyPair::generate();
    let pca_cert = issue("pca-1", &pca_key);
    let ra_key = KeyPair::generate();
    let ra_cert = issue("ra-1", &ra_key);
    AuthoritySet {
        root_key,
        root_cert,
        ltca_key,
        ltca_cert,
        pca_key,
        pca_cert,
        ra_key,
        ra_cert,
    }
}

pub async fn spawn_server(handler: Arc<dyn Handler>) -> (Server, String) {
    let server =
        Server::bind("127.0.0.1:0", ServerTransport::Plaintext, handler, ShutdownSignal::new())
            .await
            .expect("bind loopback");
    let addr = server.local_addr().to_string();
    (server, addr)
}

/// One LTCA, one PCA, one RA on loopback, sharing a manual clock at [`T0`].
pub struct World {
    pub tau_p: u64,
    pub clock: Arc<ManualClock>,
    pub set: AuthoritySet,
    pub ltca_addr: String,
    pub pca_addr: String,
    pub ra_addr: String,
    servers: Vec<Server>,
}

pub async fn build_world(tau_p: u64) -> World {
    let set = authority_set();
    let clock = ManualClock::at(T0);
    let ltca = Ltca::new(
        LtcaConfig::new("ltca-1", tau_p),
        set.ltca_key.clone(),
        set.ltca_cert.clone(),
        vec![set.root_cert.clone()],
        Store::open(&store_uri("w-ltca"), WriteMode::Strict).unwrap(),
        clock.clone(),
    );
    let pca = Pca::new(
        PcaConfig { authority_id: AuthorityId::new("pca-1") },
        set.pca_key.clone(),
        set.pca_cert.clone(),
        set.ltca_cert.clone(),
        vec![set.root_cert.clone()],
        Store::open(&store_uri("w-pca"), WriteMode::Strict).unwrap(),
        clock.clone(),
    );
    let (ltca_server, ltca_addr) = spawn_server(ltca).await;
    let (pca_server, pca_addr) = spawn_server(pca).await;
    let ra = Ra::new(
        RaConfig {
            authority_id: AuthorityId::new("ra-1"),
            ltca_addr: ltca_addr.clone(),
            pca_addrs: vec![(AuthorityId::new("pca-1"), pca_addr.clone())],
            call_deadline: DEADLINE,
        },
        set.ra_key.clone(),
        set.ra_cert.clone(),
        ClientTransport::Plaintext,
    );
    let (ra_server, ra_addr) = spawn_server(ra).await;
    World {
        tau_p,
        clock,
        set,
        ltca_addr,
        pca_addr,
        ra_addr,
        servers: vec![ltca_server, pca_server, ra_server],
    }
}

impl World {
    pub async fn connect_ltca(&self) -> Connection {
        Connection::connect(&self.ltca_addr, &ClientTransport::Plaintext).await.unwrap()
    }

    pub async fn connect_pca(&self) -> Connection {
        Connection::connect(&self.pca_addr, &ClientTransport::Plaintext).await.unwrap()
    }

    pub async fn connect_ra(&self) -> Connection {
        Connection::connect(&self.ra_addr, &ClientTransport::Plaintext).await.unwrap()
    }

    pub async fn register(&self, vehicle_id: &str) -> LtcCredential {
        let conn = self.connect_ltca().await;
        let cred = register_vehicle(&conn, vehicle_id, T0 - 60, T0 + 365 * 86_400).await;
        drop(conn);
        cred
    }

    pub async fn teardown(self) {
        for server in self.servers {
            server.stop(false).await;
        }
    }
}

pub async fn register_vehicle(
    ltca: &Connection,
    vehicle_id: &str,
    start: u64,
    end: u64,
) -> LtcCredential {
    let key = KeyPair::generate();
    let req = RegisterVehicleReq {
        vehicle_id: vehicle_id.to_string(),
        public_key: key.public(),
        start,
        end,
    };
    let ok: RegisterVehicleOkBody =
        ltca.call(MsgType::RegisterVehicle, &req, DEADLINE).await.expect("register");
    LtcCredential { ltc: ok.ltc, key }
}

pub async fn mint_ticket(
    ltca: &Connection,
    cred: &LtcCredential,
    start: u64,
    duration: u64,
    target_pca_id: &str,
) -> Ticket {
    let signature = cred
        .key
        .sign(&IssueTicketReq::auth_bytes(start, duration, target_pca_id, cred.ltc.serial));
    let req = IssueTicketReq {
        start,
        duration,
        target_pca_id: target_pca_id.to_string(),
        ltc_serial: cred.ltc.serial,
        signature,
    };
    let ok: IssueTicketOkBody =
        ltca.call(MsgType::IssueTicket, &req, DEADLINE).await.expect("mint ticket");
    ok.ticket
}
