//! Resolution Authority: stateless orchestrator that maps a pseudonym back
//! to its ticket (PCA), the ticket back to its long-term credential (LTCA),
//! and on request cascades revocation across both authorities.
//!
//! The RA holds no database. Everything it learns comes from combining the
//! two authorities' answers, and every mutating call it makes is idempotent
//! upstream, so a partially failed revocation is completed by retrying.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::Mutex;

use crate::credentials::{AuthorityId, Certificate, KeyPair, Serial};
use crate::gateway::client::{CallError, Connection};
use crate::gateway::messages::{
    ErrorBody, ErrorCode, HealthCheckOkBody, ListTicketsOkBody, ListTicketsReq, LookupTicketOkBody,
    LookupTicketReq, RaAuth, ResolutionResultBody, ResolveReq, ResolveTicketOkBody,
    ResolveTicketReq, RevokeByTicketOkBody, RevokeByTicketReq, RevokeLtcOkBody, RevokeLtcReq,
    ServiceInfoBody,
};
use crate::gateway::server::{error_response, Handler};
use crate::gateway::tls::ClientTransport;
use crate::gateway::{Envelope, MsgType};
use crate::wire::{WireDecode, WireEncode};

/// Outcome of a resolution. After `revoke_vehicle`,
/// `revoked_pseudonym_serials` covers every pseudonym revoked across all of
/// the vehicle's tickets and always contains `pseudonym_serial` itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionResult {
    pub pseudonym_serial: Serial,
    pub ticket_id: Serial,
    pub ltc_serial: Serial,
    pub revoked_pseudonym_serials: Vec<Serial>,
}

#[derive(Debug, Clone)]
pub struct RaConfig {
    pub authority_id: AuthorityId,
    pub ltca_addr: String,
    /// PCA service addresses keyed by authority id. Resolution queries all
    /// of them; revocation routes each ticket to its target PCA.
    pub pca_addrs: Vec<(AuthorityId, String)>,
    pub call_deadline: Duration,
}

pub struct Ra {
    cfg: RaConfig,
    key: KeyPair,
    cert: Certificate,
    transport: ClientTransport,
    conns: Mutex<HashMap<String, Connection>>,
}

type SvcResult<T> = Result<T, ErrorBody>;

impl Ra {
    pub fn new(cfg: RaConfig, key: KeyPair, cert: Certificate, transport: ClientTransport) -> Arc<Ra> {
        Arc::new(Ra { cfg, key, cert, transport, conns: Mutex::new(HashMap::new()) })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    pub fn authority_id(&self) -> &AuthorityId {
        &self.cfg.authority_id
    }

    fn auth(&self, auth_bytes: &[u8]) -> RaAuth {
        RaAuth { certificate: self.cert.clone(), signature: self.key.sign(auth_bytes) }
    }

    async fn conn(&self, addr: &str) -> Result<Connection, CallError> {
        let mut conns = self.conns.lock().await;
        if let Some(c) = conns.get(addr) {
            if !c.is_closed() {
                return Ok(c.clone());
            }
            conns.remove(addr);
        }
        let c = Connection::connect(addr, &self.transport).await?;
        conns.insert(addr.to_string(), c.clone());
        Ok(c)
    }

    /// One upstream call. Transport failures become `UpstreamUnavailable`
    /// tagged with `step`; remote errors propagate with their code and gain
    /// the step tag if the upstream didn't set one.
    async fn call<Req, Resp>(
        &self,
        addr: &str,
        msg_type: MsgType,
        req: &Req,
        step: &str,
    ) -> SvcResult<Resp>
    where
        Req: WireEncode,
        Resp: WireDecode,
    {
        let conn = self.conn(addr).await.map_err(|e| {
            ErrorBody::new(ErrorCode::UpstreamUnavailable, e.to_string()).with_step(step)
        })?;
        match conn.call(msg_type, req, self.cfg.call_deadline).await {
            Ok(resp) => Ok(resp),
            Err(CallError::Remote { body, .. }) => {
                Err(if body.step.is_none() { body.with_step(step) } else { body })
            }
            Err(e @ (CallError::Timeout | CallError::ConnectionFailed(_))) => {
                self.conns.lock().await.remove(addr);
                Err(ErrorBody::new(ErrorCode::UpstreamUnavailable, e.to_string()).with_step(step))
            }
            Err(CallError::Protocol(msg)) => {
                Err(ErrorBody::new(ErrorCode::Internal, msg).with_step(step))
            }
        }
    }

    /// Finds the PCA holding the serial's issuance record. A PCA answering
    /// `UnknownSerial` just means "not mine"; an unreachable PCA aborts the
    /// search because the serial could live there.
    async fn locate_ticket(&self, pseudonym_serial: Serial) -> SvcResult<(Serial, AuthorityId, String)> {
        let req = LookupTicketReq {
            pseudonym_serial,
            ra: self.auth(&LookupTicketReq::auth_bytes(pseudonym_serial)),
        };
        for (pca_id, addr) in &self.cfg.pca_addrs {
            match self.call::<_, LookupTicketOkBody>(addr, MsgType::LookupTicket, &req, "pca").await {
                Ok(ok) => return Ok((ok.ticket_id, pca_id.clone(), addr.clone())),
                Err(e) if e.code == ErrorCode::UnknownSerial => continue,
                Err(e) => return Err(e),
            }
        }
        Err(ErrorBody::new(ErrorCode::UnknownSerial, "no pca has an issuance record").with_step("pca"))
    }

    async fn resolve_ltc(&self, ticket_id: Serial) -> SvcResult<Serial> {
        let req = ResolveTicketReq { ticket_id, ra: self.auth(&ResolveTicketReq::auth_bytes(ticket_id)) };
        let ok: ResolveTicketOkBody =
            self.call(&self.cfg.ltca_addr, MsgType::ResolveTicket, &req, "ltca").await?;
        Ok(ok.ltc_serial)
    }

    pub async fn resolve(&self, pseudonym_serial: Serial) -> SvcResult<ResolutionResult> {
        let (ticket_id, _, _) = self.locate_ticket(pseudonym_serial).await?;
        let ltc_serial = self.resolve_ltc(ticket_id).await?;
        Ok(ResolutionResult {
            pseudonym_serial,
            ticket_id,
            ltc_serial,
            revoked_pseudonym_serials: Vec::new(),
        })
    }

    /// Resolves the vehicle, revokes every ticket the LTCA ledgered for its
    /// LTC at each ticket's target PCA, then revokes the LTC itself. A
    /// failure after the first mutation reports `PartialFailure` naming the
    /// failed leg and what completed; retrying converges because every leg
    /// is idempotent.
    pub async fn revoke_vehicle(&self, pseudonym_serial: Serial) -> SvcResult<ResolutionResult> {
        let (ticket_id, _, _) = self.locate_ticket(pseudonym_serial).await?;
        let ltc_serial = self.resolve_ltc(ticket_id).await?;

        let list: ListTicketsOkBody = self
            .call(
                &self.cfg.ltca_addr,
                MsgType::ListTickets,
                &ListTicketsReq { ltc_serial, ra: self.auth(&ListTicketsReq::auth_bytes(ltc_serial)) },
                "ltca",
            )
            .await?;

        let mut revoked = Vec::new();
        let mut completed: Vec<String> = Vec::new();
        let partial = |failed: ErrorBody, completed: &[String]| {
            let done = if completed.is_empty() { "none".to_string() } else { completed.join(", ") };
            ErrorBody::new(
                ErrorCode::PartialFailure,
                format!("leg {} failed ({}); completed: {done}", failed.step.as_deref().unwrap_or("?"), failed.message),
            )
            .with_step(failed.step.unwrap_or_else(|| "pca".into()))
        };

        for ticket in &list.tickets {
            let addr = match self.cfg.pca_addrs.iter().find(|(id, _)| id.as_str() == ticket.target_pca_id) {
                Some((_, addr)) => addr.clone(),
                None => {
                    let failed = ErrorBody::new(
                        ErrorCode::UpstreamUnavailable,
                        format!("no address for pca {}", ticket.target_pca_id),
                    )
                    .with_step(format!("pca:{}", ticket.target_pca_id));
                    return Err(partial(failed, &completed));
                }
            };
            let req = RevokeByTicketReq {
                ticket_id: ticket.ticket_id,
                ra: self.auth(&RevokeByTicketReq::auth_bytes(ticket.ticket_id)),
            };
            let step = format!("pca:{}", ticket.target_pca_id);
            match self.call::<_, RevokeByTicketOkBody>(&addr, MsgType::RevokeByTicket, &req, &step).await {
                Ok(ok) => {
                    revoked.extend(ok.revoked_serials);
                    completed.push(format!("{step}/{}", ticket.ticket_id.to_hex()));
                }
                // A ledgered ticket that never reached the PCA has nothing
                // to revoke; the LTC revocation below still disarms it.
                Err(e) if e.code == ErrorCode::UnknownTicket => {
                    completed.push(format!("{step}/{} (unused)", ticket.ticket_id.to_hex()));
                }
                Err(e) => return Err(partial(e, &completed)),
            }
        }

        let revoke_req =
            RevokeLtcReq { ltc_serial, ra: self.auth(&RevokeLtcReq::auth_bytes(ltc_serial)) };
        if let Err(e) = self
            .call::<_, RevokeLtcOkBody>(&self.cfg.ltca_addr, MsgType::RevokeLtc, &revoke_req, "ltca")
            .await
        {
            return Err(partial(e, &completed));
        }

        revoked.sort();
        revoked.dedup();
        Ok(ResolutionResult { pseudonym_serial, ticket_id, ltc_serial, revoked_pseudonym_serials: revoked })
    }

    /// Liveness probe: exercise the signing path by producing and checking
    /// a throwaway authorization, without contacting any upstream.
    pub fn health_dry_run(&self) -> SvcResult<HealthCheckOkBody> {
        let bytes = LookupTicketReq::auth_bytes(Serial::random());
        let sig = self.key.sign(&bytes);
        self.key
            .public()
            .verify(&bytes, &sig)
            .map_err(|e| ErrorBody::new(ErrorCode::Internal, format!("dry-run: {e}")))?;
        Ok(HealthCheckOkBody { detail: "auth-dry-run".into() })
    }
}

fn decode_or_invalid<T: WireDecode>(body: &[u8]) -> SvcResult<T> {
    T::decode(body).map_err(|e| ErrorBody::new(ErrorCode::InvalidRequest, e.to_string()))
}

#[async_trait::async_trait]
impl Handler for Ra {
    async fn handle(&self, env: Envelope) -> Envelope {
        let id = env.correlation_id;
        let result: SvcResult<(MsgType, Vec<u8>)> = async {
            Ok(match env.msg_type {
                MsgType::Resolve => {
                    let req: ResolveReq = decode_or_invalid(&env.body)?;
                    let result = self.resolve(req.pseudonym_serial).await?;
                    (MsgType::ResolveOk, ResolutionResultBody { result }.encode())
                }
                MsgType::RevokeVehicle => {
                    let req: ResolveReq = decode_or_invalid(&env.body)?;
                    let result = self.revoke_vehicle(req.pseudonym_serial).await?;
                    (MsgType::RevokeVehicleOk, ResolutionResultBody { result }.encode())
                }
                MsgType::HealthCheck => (MsgType::HealthCheckOk, self.health_dry_run()?.encode()),
                MsgType::GetServiceInfo => (
                    MsgType::GetServiceInfoOk,
                    ServiceInfoBody {
                        kind: 3,
                        authority_id: self.cfg.authority_id.0.clone(),
                        certificate: self.cert.clone(),
                    }
                    .encode(),
                ),
                other => {
                    return Err(ErrorBody::new(
                        ErrorCode::InvalidRequest,
                        format!("ra does not serve {other:?}"),
                    ))
                }
            })
        }
        .await;
        match result {
            Ok((msg_type, body)) => Envelope::new(msg_type, id, body),
            Err(body) => error_response(id, body),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::credentials::{make_csr, Certificate, Validity};
    use crate::gateway::messages::{IssuePseudonymsReq, IssueTicketReq};
    use crate::gateway::server::{Server, ShutdownSignal};
    use crate::gateway::tls::ServerTransport;
    use crate::ltca::{Ltca, LtcaConfig, Ticket};
    use crate::pca::{Pca, PcaConfig};
    use crate::store::{Store, WriteMode};
    use crate::testutil::{make_domain, Domain};

    const T0: u64 = 1_000_000_200;
    const TAU: u64 = 300;

    struct World {
        domain: Domain,
        ltca: Arc<Ltca>,
        pca1: Arc<Pca>,
        ltca_addr: String,
        pca1_addr: String,
        pca2_addr: String,
        servers: Vec<Server>,
    }

    async fn spawn(handler: Arc<dyn Handler>) -> (Server, String) {
        let server =
            Server::bind("127.0.0.1:0", ServerTransport::Plaintext, handler, ShutdownSignal::new())
                .await
                .unwrap();
        let addr = server.local_addr().to_string();
        (server, addr)
    }

    async fn build_world() -> World {
        let domain = make_domain();
        let clock = ManualClock::at(T0);
        let anchors = vec![domain.root_cert.clone()];
        let ltca = Ltca::new(
            LtcaConfig::new("ltca", TAU),
            domain.ltca_key.clone(),
            domain.ltca_cert.clone(),
            anchors.clone(),
            Store::open("mem://", WriteMode::Strict).unwrap(),
            clock.clone(),
        );
        let pca1 = Pca::new(
            PcaConfig { authority_id: AuthorityId::new("pca-1") },
            domain.pca_key.clone(),
            domain.pca_cert.clone(),
            domain.ltca_cert.clone(),
            anchors.clone(),
            Store::open("mem://", WriteMode::Strict).unwrap(),
            clock.clone(),
        );
        let pca2_key = KeyPair::generate();
        let pca2_cert = domain.issue_authority("pca-2", &pca2_key);
        let pca2 = Pca::new(
            PcaConfig { authority_id: AuthorityId::new("pca-2") },
            pca2_key,
            pca2_cert,
            domain.ltca_cert.clone(),
            anchors,
            Store::open("mem://", WriteMode::Strict).unwrap(),
            clock,
        );
        let (ltca_server, ltca_addr) = spawn(ltca.clone()).await;
        let (pca1_server, pca1_addr) = spawn(pca1.clone()).await;
        let (pca2_server, pca2_addr) = spawn(pca2).await;
        World {
            domain,
            ltca,
            pca1,
            ltca_addr,
            pca1_addr,
            pca2_addr,
            servers: vec![ltca_server, pca1_server, pca2_server],
        }
    }

    fn make_ra(world: &World, pca_addrs: Vec<(AuthorityId, String)>) -> Arc<Ra> {
        Ra::new(
            RaConfig {
                authority_id: AuthorityId::new("ra"),
                ltca_addr: world.ltca_addr.clone(),
                pca_addrs,
                call_deadline: Duration::from_secs(5),
            },
            world.domain.ra_key.clone(),
            world.domain.ra_cert.clone(),
            ClientTransport::Plaintext,
        )
    }

    fn full_ra(world: &World) -> Arc<Ra> {
        make_ra(
            world,
            vec![
                (AuthorityId::new("pca-1"), world.pca1_addr.clone()),
                (AuthorityId::new("pca-2"), world.pca2_addr.clone()),
            ],
        )
    }

    struct Issued {
        ltc: Certificate,
        key: KeyPair,
        ticket: Ticket,
        pseudonyms: Vec<Certificate>,
    }

    fn ticket_req(key: &KeyPair, ltc: &Certificate, target: &str, duration: u64) -> IssueTicketReq {
        IssueTicketReq {
            start: T0,
            duration,
            target_pca_id: target.into(),
            ltc_serial: ltc.serial,
            signature: key.sign(&IssueTicketReq::auth_bytes(T0, duration, target, ltc.serial)),
        }
    }

    /// Registers a vehicle, issues one ticket at pca-1, redeems it for a
    /// full batch of pseudonyms.
    fn provision(world: &World, vehicle_id: &str, max: u32) -> Issued {
        let key = KeyPair::generate();
        let ltc = world
            .ltca
            .register_vehicle(
                vehicle_id,
                key.public(),
                Validity::new(T0 - 1000, T0 + 1_000_000).unwrap(),
            )
            .unwrap();
        let ticket = world
            .ltca
            .issue_ticket(&ticket_req(&key, &ltc, "pca-1", u64::from(max) * TAU))
            .unwrap();
        let csrs = (0..max).map(|_| make_csr(&KeyPair::generate())).collect();
        let out = world
            .pca1
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs })
            .unwrap();
        Issued { ltc, key, ticket, pseudonyms: out.pseudonyms }
    }

    async fn teardown(world: World) {
        for s in world.servers {
            s.stop(false).await;
        }
    }

    #[tokio::test]
    async fn resolve_end_to_end() {
        let world = build_world().await;
        let ra = full_ra(&world);
        let issued = provision(&world, "veh-1", 12);

        let p = issued.pseudonyms[5].serial;
        let r = ra.resolve(p).await.unwrap();
        assert_eq!(r.pseudonym_serial, p);
        assert_eq!(r.ticket_id, issued.ticket.ticket_id);
        assert_eq!(r.ltc_serial, issued.ltc.serial);
        assert!(r.revoked_pseudonym_serials.is_empty());

        // Resolution reads, never writes: the vehicle can still get tickets.
        world
            .ltca
            .issue_ticket(&ticket_req(&issued.key, &issued.ltc, "pca-1", TAU))
            .unwrap();

        let err = ra.resolve(Serial::random()).await.unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownSerial);
        teardown(world).await;
    }

    #[tokio::test]
    async fn revoke_vehicle_cascades_and_is_idempotent() {
        let world = build_world().await;
        let ra = full_ra(&world);
        let issued = provision(&world, "veh-1", 12);
        // A second, never-redeemed ticket at the other PCA: revocation must
        // tolerate tickets with no issuance records.
        world
            .ltca
            .issue_ticket(&ticket_req(&issued.key, &issued.ltc, "pca-2", TAU))
            .unwrap();

        let p = issued.pseudonyms[0].serial;
        let r = ra.revoke_vehicle(p).await.unwrap();
        let mut expect: Vec<Serial> = issued.pseudonyms.iter().map(|c| c.serial).collect();
        expect.sort();
        assert_eq!(r.revoked_pseudonym_serials, expect);
        assert!(r.revoked_pseudonym_serials.contains(&p));

        // Cascade completeness: every serial issued under the LTC's tickets
        // is now CRL-listed.
        let crl = world.pca1.get_crl().unwrap();
        for s in &expect {
            assert!(crl.contains(*s));
        }

        // The LTC is dead: new ticket requests fail closed.
        let err = world
            .ltca
            .issue_ticket(&ticket_req(&issued.key, &issued.ltc, "pca-1", TAU))
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::RevokedLtc);

        // End-to-end idempotency: same result, identical CRL bytes.
        let again = ra.revoke_vehicle(p).await.unwrap();
        assert_eq!(again.revoked_pseudonym_serials, expect);
        assert_eq!(world.pca1.get_crl().unwrap().encode(), crl.encode());
        teardown(world).await;
    }

    #[tokio::test]
    async fn unreachable_pca_is_upstream_unavailable() {
        let world = build_world().await;
        let ra = full_ra(&world);
        // Probe once with everything up so a connection gets cached.
        assert_eq!(ra.resolve(Serial::random()).await.unwrap_err().code, ErrorCode::UnknownSerial);

        let mut world = world;
        let pca2_server = world.servers.pop().unwrap();
        pca2_server.stop(false).await;

        let err = ra.resolve(Serial::random()).await.unwrap_err();
        assert_eq!(err.code, ErrorCode::UpstreamUnavailable);
        assert_eq!(err.step.as_deref(), Some("pca"));
        teardown(world).await;
    }

    #[tokio::test]
    async fn unroutable_ticket_reports_partial_failure_and_retry_completes() {
        let world = build_world().await;
        // This RA only knows pca-1; the vehicle also holds a pca-2 ticket.
        let crippled = make_ra(&world, vec![(AuthorityId::new("pca-1"), world.pca1_addr.clone())]);
        let issued = provision(&world, "veh-1", 12);
        world
            .ltca
            .issue_ticket(&ticket_req(&issued.key, &issued.ltc, "pca-2", TAU))
            .unwrap();

        let p = issued.pseudonyms[3].serial;
        let err = crippled.revoke_vehicle(p).await.unwrap_err();
        assert_eq!(err.code, ErrorCode::PartialFailure);
        assert_eq!(err.step.as_deref(), Some("pca:pca-2"));

        // The caller retries against a fully configured RA and converges.
        let ra = full_ra(&world);
        let r = ra.revoke_vehicle(p).await.unwrap();
        assert_eq!(r.revoked_pseudonym_serials.len(), 12);
        let err = world
            .ltca
            .issue_ticket(&ticket_req(&issued.key, &issued.ltc, "pca-1", TAU))
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::RevokedLtc);
        teardown(world).await;
    }

    #[tokio::test]
    async fn separation_of_knowledge_on_the_wire() {
        let world = build_world().await;
        let issued = provision(&world, "veh-1", 4);
        let p = issued.pseudonyms[0].serial;
        let ra = full_ra(&world);

        // Raw PCA answer: links pseudonym to ticket, never to the LTC.
        let lookup = LookupTicketReq {
            pseudonym_serial: p,
            ra: ra.auth(&LookupTicketReq::auth_bytes(p)),
        };
        let resp = world
            .pca1
            .handle(Envelope::new(MsgType::LookupTicket, 7, lookup.encode()))
            .await;
        assert_eq!(resp.msg_type, MsgType::LookupTicketOk);
        let ltc_bytes = issued.ltc.serial.0;
        assert!(!resp.body.windows(ltc_bytes.len()).any(|w| w == ltc_bytes));

        // Raw LTCA answer: links ticket to LTC, never to the pseudonym.
        let resolve = ResolveTicketReq {
            ticket_id: issued.ticket.ticket_id,
            ra: ra.auth(&ResolveTicketReq::auth_bytes(issued.ticket.ticket_id)),
        };
        let resp = world
            .ltca
            .handle(Envelope::new(MsgType::ResolveTicket, 8, resolve.encode()))
            .await;
        assert_eq!(resp.msg_type, MsgType::ResolveTicketOk);
        assert!(!resp.body.windows(p.0.len()).any(|w| w == p.0));
        teardown(world).await;
    }
}
