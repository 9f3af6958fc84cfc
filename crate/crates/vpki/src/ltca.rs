//! Long-Term Certification Authority: vehicle registration, LTC issuance,
//! single-use authorization-ticket issuance, and the server-side ledger
//! that lets an authorized RA resolve tickets back to vehicles.

use std::sync::Arc;

use crate::clock::Clock;
use crate::credentials::{
    sign_certificate, AuthorityId, CertKind, Certificate, KeyPair, PublicKey, Serial, Sig,
    TbsCertificate, Validity, SERIAL_LEN,
};
use crate::gateway::messages::{
    ErrorBody, ErrorCode, HealthCheckOkBody, IssueTicketOkBody, IssueTicketReq,
    ListTicketsOkBody, ListTicketsReq, RaAuth, RegisterVehicleOkBody, RegisterVehicleReq,
    ResolveTicketOkBody, ResolveTicketReq, RevokeLtcOkBody, RevokeLtcReq, ServiceInfoBody,
    TicketRef,
};
use crate::gateway::server::{error_response, Handler};
use crate::gateway::{Envelope, MsgType};
use crate::store::{ConsumeOutcome, Namespace, Store};
use crate::wire::{Dec, Enc, WireDecode, WireEncode, WireError};

/// Single-use pseudonym-acquisition authorization. Carries no
/// vehicle-identifying field: resolution goes through the LTCA's private
/// ledger, never through ticket content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ticket {
    pub ticket_id: Serial,
    pub target_pca_id: AuthorityId,
    /// Window [t_s, t_e) in UTC seconds, aligned to lifetime boundaries.
    pub t_s: u64,
    pub t_e: u64,
    pub max_pseudonyms: u32,
    pub signature: Sig,
}

impl Ticket {
    pub fn tbs_bytes(
        ticket_id: Serial,
        target_pca_id: &str,
        t_s: u64,
        t_e: u64,
        max_pseudonyms: u32,
    ) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &ticket_id.0)
            .string(2, target_pca_id)
            .u64(3, t_s)
            .u64(4, t_e)
            .u32(5, max_pseudonyms);
        e.finish()
    }

    pub fn verify(&self, ltca_key: &PublicKey) -> Result<(), crate::credentials::CredentialError> {
        let tbs = Self::tbs_bytes(
            self.ticket_id,
            self.target_pca_id.as_str(),
            self.t_s,
            self.t_e,
            self.max_pseudonyms,
        );
        ltca_key.verify(&tbs, &self.signature)
    }

    /// Pseudonym lifetime implied by the window; tickets are constructed so
    /// this divides evenly.
    pub fn lifetime(&self) -> u64 {
        (self.t_e - self.t_s) / u64::from(self.max_pseudonyms)
    }
}

impl WireEncode for Ticket {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.ticket_id.0)
            .string(2, self.target_pca_id.as_str())
            .u64(3, self.t_s)
            .u64(4, self.t_e)
            .u32(5, self.max_pseudonyms)
            .bytes(6, &self.signature.0);
        e.finish()
    }
}

impl WireDecode for Ticket {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let ticket_id = Serial(d.array(1)?);
        let target_pca_id = AuthorityId(d.string(2)?);
        let t_s = d.u64(3)?;
        let t_e = d.u64(4)?;
        let max_pseudonyms = d.u32(5)?;
        let signature = Sig(d.array(6)?);
        d.finish()?;
        Ok(Ticket { ticket_id, target_pca_id, t_s, t_e, max_pseudonyms, signature })
    }
}

/// Requested acquisition period rounded outward to epoch-anchored
/// lifetime boundaries, so ticket timing cannot fingerprint the request.
/// Returns (t_s, t_e).
pub fn align_window(start: u64, duration: u64, tau_p: u64) -> Option<(u64, u64)> {
    if duration == 0 || tau_p == 0 {
        return None;
    }
    let t_s = start - start % tau_p;
    let end = start.checked_add(duration)?;
    let t_e = end.checked_add(tau_p - 1)? / tau_p * tau_p;
    Some((t_s, t_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VehicleStatus {
    Active,
    Revoked,
}

/// Stored registration state: the vehicle's current LTC plus a generation
/// counter used to make re-registration claims atomic.
#[derive(Debug, Clone)]
struct VehicleRecord {
    vehicle_id: String,
    status: VehicleStatus,
    generation: u32,
    ltc: Certificate,
}

impl VehicleRecord {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.string(1, &self.vehicle_id)
            .u8(2, match self.status {
                VehicleStatus::Active => 1,
                VehicleStatus::Revoked => 2,
            })
            .u32(3, self.generation)
            .bytes(4, &self.ltc.encode());
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let vehicle_id = d.string(1)?;
        let status = match d.u8(2)? {
            1 => VehicleStatus::Active,
            2 => VehicleStatus::Revoked,
            v => return Err(WireError::BadEnum { tag: 2, value: u64::from(v) }),
        };
        let generation = d.u32(3)?;
        let ltc = Certificate::decode(d.raw(4)?)?;
        d.finish()?;
        Ok(VehicleRecord { vehicle_id, status, generation, ltc })
    }
}

#[derive(Debug, Clone)]
pub struct LtcaConfig {
    pub authority_id: AuthorityId,
    /// Pseudonym lifetime τ_P in seconds.
    pub tau_p: u64,
    /// Maximum ticket window length in seconds (default: one day of
    /// pseudonyms per ticket).
    pub window_cap: u64,
}

impl LtcaConfig {
    pub fn new(authority_id: impl Into<String>, tau_p: u64) -> Self {
        LtcaConfig {
            authority_id: AuthorityId::new(authority_id),
            tau_p,
            window_cap: 86_400,
        }
    }
}

pub struct Ltca {
    cfg: LtcaConfig,
    key: KeyPair,
    cert: Certificate,
    /// Anchors for verifying presented RA credentials.
    trust_anchors: Vec<Certificate>,
    store: Store,
    clock: Arc<dyn Clock>,
}

type SvcResult<T> = Result<T, ErrorBody>;

fn store_err(e: crate::store::StoreError) -> ErrorBody {
    ErrorBody::new(ErrorCode::StoreUnavailable, e.to_string())
}

/// Verifies an RA credential: certificate chains to a configured anchor
/// and the signature covers the operation's auth bytes.
pub(crate) fn verify_ra_auth(
    auth: &RaAuth,
    auth_bytes: &[u8],
    anchors: &[Certificate],
    now: u64,
) -> SvcResult<()> {
    crate::credentials::verify_chain(&auth.certificate, &[], anchors, now)
        .map_err(|e| ErrorBody::new(ErrorCode::Unauthorized, format!("ra certificate: {e}")))?;
    if auth.certificate.kind != CertKind::AuthorityCert {
        return Err(ErrorBody::new(ErrorCode::Unauthorized, "ra credential is not an authority certificate"));
    }
    auth.certificate
        .subject_public_key
        .verify(auth_bytes, &auth.signature)
        .map_err(|_| ErrorBody::new(ErrorCode::Unauthorized, "ra signature does not verify"))
}

impl Ltca {
    pub fn new(
        cfg: LtcaConfig,
        key: KeyPair,
        cert: Certificate,
        trust_anchors: Vec<Certificate>,
        store: Store,
        clock: Arc<dyn Clock>,
    ) -> Arc<Ltca> {
        Arc::new(Ltca { cfg, key, cert, trust_anchors, store, clock })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    pub fn authority_id(&self) -> &AuthorityId {
        &self.cfg.authority_id
    }

    fn vehicle_key(vehicle_id: &str) -> String {
        format!("id/{vehicle_id}")
    }

    fn serial_key(serial: Serial) -> String {
        format!("serial/{}", serial.to_hex())
    }

    fn load_vehicle(&self, vehicle_id: &str) -> SvcResult<Option<VehicleRecord>> {
        match self.store.get(Namespace::Vehicles, &Self::vehicle_key(vehicle_id)) {
            Err(e) => Err(store_err(e)),
            Ok(None) => Ok(None),
            Ok(Some(bytes)) => VehicleRecord::decode(&bytes)
                .map(Some)
                .map_err(|e| ErrorBody::new(ErrorCode::Internal, format!("vehicle record: {e}"))),
        }
    }

    pub fn register_vehicle(
        &self,
        vehicle_id: &str,
        public_key: PublicKey,
        validity: Validity,
    ) -> SvcResult<Certificate> {
        if vehicle_id.is_empty() {
            return Err(ErrorBody::new(ErrorCode::InvalidRequest, "empty vehicle id"));
        }
        // Reject keys that are not valid curve points up front.
        PublicKey::from_bytes(&public_key.0)
            .map_err(|e| ErrorBody::new(ErrorCode::InvalidRequest, e.to_string()))?;
        let prior = self.load_vehicle(vehicle_id)?;
        let generation = match &prior {
            Some(rec) if rec.status == VehicleStatus::Active => {
                return Err(ErrorBody::new(
                    ErrorCode::DuplicateRegistration,
                    format!("vehicle {vehicle_id} already holds an active ltc"),
                ));
            }
            Some(rec) => rec.generation + 1,
            None => 1,
        };
        // Atomic claim: of any concurrent registrations for this
        // (vehicle, generation), exactly one proceeds.
        let claim = format!("claim/{vehicle_id}/{generation}");
        match self.store.consume_once(Namespace::Vehicles, &claim).map_err(store_err)? {
            ConsumeOutcome::Won => {}
            ConsumeOutcome::AlreadyConsumed => {
                return Err(ErrorBody::new(
                    ErrorCode::DuplicateRegistration,
                    format!("vehicle {vehicle_id} registration already in progress"),
                ));
            }
        }
        let tbs = TbsCertificate {
            serial: Serial::random(),
            kind: CertKind::Ltc,
            subject_public_key: public_key,
            validity,
            issuer_id: self.cfg.authority_id.clone(),
            subject_id: None,
        };
        let ltc = sign_certificate(&self.key, tbs)
            .map_err(|e| ErrorBody::new(ErrorCode::InvalidRequest, e.to_string()))?;
        let record = VehicleRecord {
            vehicle_id: vehicle_id.to_string(),
            status: VehicleStatus::Active,
            generation,
            ltc: ltc.clone(),
        };
        self.store
            .put(Namespace::Vehicles, &Self::vehicle_key(vehicle_id), &record.encode())
            .map_err(store_err)?;
        self.store
            .put(Namespace::Vehicles, &Self::serial_key(ltc.serial), vehicle_id.as_bytes())
            .map_err(store_err)?;
        Ok(ltc)
    }

    pub fn issue_ticket(&self, req: &IssueTicketReq) -> SvcResult<Ticket> {
        let now = self.clock.now();
        let vehicle_id = self
            .store
            .get(Namespace::Vehicles, &Self::serial_key(req.ltc_serial))
            .map_err(store_err)?
            .ok_or_else(|| ErrorBody::new(ErrorCode::BadAuth, "unknown ltc serial"))?;
        let vehicle_id = String::from_utf8(vehicle_id)
            .map_err(|_| ErrorBody::new(ErrorCode::Internal, "corrupt serial index"))?;
        let record = self
            .load_vehicle(&vehicle_id)?
            .ok_or_else(|| ErrorBody::new(ErrorCode::Internal, "dangling serial index"))?;
        // A serial from a superseded registration is a revoked credential.
        if record.ltc.serial != req.ltc_serial || record.status == VehicleStatus::Revoked {
            return Err(ErrorBody::new(ErrorCode::RevokedLtc, "ltc is revoked"));
        }
        if now >= record.ltc.validity.end {
            return Err(ErrorBody::new(ErrorCode::ExpiredLtc, "ltc expired"));
        }
        if now < record.ltc.validity.start {
            return Err(ErrorBody::new(ErrorCode::BadAuth, "ltc not yet valid"));
        }
        let auth_bytes = IssueTicketReq::auth_bytes(
            req.start,
            req.duration,
            &req.target_pca_id,
            req.ltc_serial,
        );
        record
            .ltc
            .subject_public_key
            .verify(&auth_bytes, &req.signature)
            .map_err(|_| ErrorBody::new(ErrorCode::BadAuth, "request signature does not verify"))?;

        let (t_s, t_e) = align_window(req.start, req.duration, self.cfg.tau_p)
            .ok_or_else(|| ErrorBody::new(ErrorCode::InvalidRequest, "empty or overflowing window"))?;
        let window = t_e - t_s;
        if window > self.cfg.window_cap {
            return Err(ErrorBody::new(
                ErrorCode::WindowTooLarge,
                format!("window {window}s exceeds cap {}s", self.cfg.window_cap),
            ));
        }
        let max_pseudonyms = u32::try_from(window / self.cfg.tau_p)
            .map_err(|_| ErrorBody::new(ErrorCode::WindowTooLarge, "window overflows"))?;

        let ticket_id = Serial::random();
        let tbs = Ticket::tbs_bytes(ticket_id, &req.target_pca_id, t_s, t_e, max_pseudonyms);
        let ticket = Ticket {
            ticket_id,
            target_pca_id: AuthorityId(req.target_pca_id.clone()),
            t_s,
            t_e,
            max_pseudonyms,
            signature: self.key.sign(&tbs),
        };
        // Ledger before response: a ticket the vehicle holds must always be
        // resolvable.
        let entry = {
            let mut e = Enc::new();
            e.bytes(1, &record.ltc.serial.0).string(2, &req.target_pca_id);
            e.finish()
        };
        self.store
            .put(Namespace::TicketsLedger, &format!("t/{}", ticket_id.to_hex()), &entry)
            .map_err(store_err)?;
        self.store
            .put(
                Namespace::TicketsLedger,
                &format!("ltc/{}/{}", record.ltc.serial.to_hex(), ticket_id.to_hex()),
                req.target_pca_id.as_bytes(),
            )
            .map_err(store_err)?;
        Ok(ticket)
    }

    fn ledger_entry(&self, ticket_id: Serial) -> SvcResult<Option<(Serial, String)>> {
        let key = format!("t/{}", ticket_id.to_hex());
        match self.store.get(Namespace::TicketsLedger, &key).map_err(store_err)? {
            None => Ok(None),
            Some(bytes) => {
                let mut d = Dec::new(&bytes);
                let ltc_serial = Serial(d.array::<SERIAL_LEN>(1).map_err(internal)?);
                let pca = d.string(2).map_err(internal)?;
                d.finish().map_err(internal)?;
                Ok(Some((ltc_serial, pca)))
            }
        }
    }

    pub fn resolve_ticket(&self, req: &ResolveTicketReq) -> SvcResult<Serial> {
        verify_ra_auth(
            &req.ra,
            &ResolveTicketReq::auth_bytes(req.ticket_id),
            &self.trust_anchors,
            self.clock.now(),
        )?;
        self.ledger_entry(req.ticket_id)?
            .map(|(serial, _)| serial)
            .ok_or_else(|| ErrorBody::new(ErrorCode::UnknownTicket, "ticket not in ledger"))
    }

    pub fn list_tickets(&self, req: &ListTicketsReq) -> SvcResult<Vec<TicketRef>> {
        verify_ra_auth(
            &req.ra,
            &ListTicketsReq::auth_bytes(req.ltc_serial),
            &self.trust_anchors,
            self.clock.now(),
        )?;
        let prefix = format!("ltc/{}/", req.ltc_serial.to_hex());
        let items = self.store.scan_prefix(Namespace::TicketsLedger, &prefix).map_err(store_err)?;
        let mut refs = Vec::with_capacity(items.len());
        for (key, value) in items {
            let hex = &key[prefix.len()..];
            let ticket_id = Serial::from_hex(hex)
                .ok_or_else(|| ErrorBody::new(ErrorCode::Internal, "corrupt ticket index"))?;
            let target_pca_id = String::from_utf8(value)
                .map_err(|_| ErrorBody::new(ErrorCode::Internal, "corrupt ticket index"))?;
            refs.push(TicketRef { ticket_id, target_pca_id });
        }
        Ok(refs)
    }

    pub fn revoke_ltc(&self, req: &RevokeLtcReq) -> SvcResult<()> {
        verify_ra_auth(
            &req.ra,
            &RevokeLtcReq::auth_bytes(req.ltc_serial),
            &self.trust_anchors,
            self.clock.now(),
        )?;
        let vehicle_id = self
            .store
            .get(Namespace::Vehicles, &Self::serial_key(req.ltc_serial))
            .map_err(store_err)?
            .ok_or_else(|| ErrorBody::new(ErrorCode::UnknownSerial, "unknown ltc serial"))?;
        let vehicle_id = String::from_utf8(vehicle_id)
            .map_err(|_| ErrorBody::new(ErrorCode::Internal, "corrupt serial index"))?;
        let mut record = self
            .load_vehicle(&vehicle_id)?
            .ok_or_else(|| ErrorBody::new(ErrorCode::Internal, "dangling serial index"))?;
        // Revoking a superseded serial is a no-op: that credential is
        // already dead. Revoking the current one flips the record.
        if record.ltc.serial == req.ltc_serial && record.status == VehicleStatus::Active {
            record.status = VehicleStatus::Revoked;
            self.store
                .put(Namespace::Vehicles, &Self::vehicle_key(&vehicle_id), &record.encode())
                .map_err(store_err)?;
        }
        Ok(())
    }

    /// Crypto-path dry run for liveness probes: sign and verify a
    /// throwaway ticket without touching the store.
    pub fn health_dry_run(&self) -> SvcResult<HealthCheckOkBody> {
        let tbs = Ticket::tbs_bytes(Serial::random(), "probe", 0, self.cfg.tau_p, 1);
        let sig = self.key.sign(&tbs);
        self.key
            .public()
            .verify(&tbs, &sig)
            .map_err(|e| ErrorBody::new(ErrorCode::Internal, format!("dry-run: {e}")))?;
        Ok(HealthCheckOkBody { detail: "ticket-dry-run".into() })
    }
}

fn internal(e: WireError) -> ErrorBody {
    ErrorBody::new(ErrorCode::Internal, e.to_string())
}

fn decode_or_invalid<T: WireDecode>(body: &[u8]) -> SvcResult<T> {
    T::decode(body).map_err(|e| ErrorBody::new(ErrorCode::InvalidRequest, e.to_string()))
}

#[async_trait::async_trait]
impl Handler for Ltca {
    async fn handle(&self, env: Envelope) -> Envelope {
        let id = env.correlation_id;
        let result: SvcResult<(MsgType, Vec<u8>)> = (|| {
            Ok(match env.msg_type {
                MsgType::RegisterVehicle => {
                    let req: RegisterVehicleReq = decode_or_invalid(&env.body)?;
                    let validity = Validity::new(req.start, req.end)
                        .map_err(|e| ErrorBody::new(ErrorCode::InvalidRequest, e.to_string()))?;
                    let ltc = self.register_vehicle(&req.vehicle_id, req.public_key, validity)?;
                    (MsgType::RegisterVehicleOk, RegisterVehicleOkBody { ltc }.encode())
                }
                MsgType::IssueTicket => {
                    let req: IssueTicketReq = decode_or_invalid(&env.body)?;
                    let ticket = self.issue_ticket(&req)?;
                    (MsgType::IssueTicketOk, IssueTicketOkBody { ticket }.encode())
                }
                MsgType::ResolveTicket => {
                    let req: ResolveTicketReq = decode_or_invalid(&env.body)?;
                    let ltc_serial = self.resolve_ticket(&req)?;
                    (MsgType::ResolveTicketOk, ResolveTicketOkBody { ltc_serial }.encode())
                }
                MsgType::ListTickets => {
                    let req: ListTicketsReq = decode_or_invalid(&env.body)?;
                    let tickets = self.list_tickets(&req)?;
                    (MsgType::ListTicketsOk, ListTicketsOkBody { tickets }.encode())
                }
                MsgType::RevokeLtc => {
                    let req: RevokeLtcReq = decode_or_invalid(&env.body)?;
                    self.revoke_ltc(&req)?;
                    (MsgType::RevokeLtcOk, RevokeLtcOkBody.encode())
                }
                MsgType::HealthCheck => {
                    (MsgType::HealthCheckOk, self.health_dry_run()?.encode())
                }
                MsgType::GetServiceInfo => (
                    MsgType::GetServiceInfoOk,
                    ServiceInfoBody {
                        kind: 1,
                        authority_id: self.cfg.authority_id.0.clone(),
                        certificate: self.cert.clone(),
                    }
                    .encode(),
                ),
                other => {
                    return Err(ErrorBody::new(
                        ErrorCode::InvalidRequest,
                        format!("ltca does not serve {other:?}"),
                    ))
                }
            })
        })();
        match result {
            Ok((msg_type, body)) => Envelope::new(msg_type, id, body),
            Err(body) => error_response(id, body),
        }
    }
}
