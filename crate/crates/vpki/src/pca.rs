//! Pseudonym Certification Authority: ticket validation, batch pseudonym
//! issuance against CSRs, issuance records for resolution, and the CRL.
//!
//! Two write modes mirror two deployment styles. Strict mode claims the
//! ticket through the store's atomic consume-once before responding, so
//! duplicate submissions lose even across replicas. Async mode checks for
//! a consumption marker, then queues both the marker and the issuance
//! records behind an artificial write delay; until the queue drains,
//! concurrent duplicates on other replicas can slip through. That window
//! is deliberate and exercised by the race tests.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use crate::clock::Clock;
use crate::credentials::{
    sign_certificate, verify_csr, AuthorityId, CertKind, Certificate, KeyPair, PublicKey,
    Serial, Sig, TbsCertificate, Validity, SERIAL_LEN,
};
use crate::gateway::messages::{
    ErrorBody, ErrorCode, GetCrlOkBody, HealthCheckOkBody, IssuePseudonymsOkBody,
    IssuePseudonymsReq, LookupTicketOkBody, LookupTicketReq, RevokeByTicketOkBody,
    RevokeByTicketReq, ServiceInfoBody,
};
use crate::gateway::server::{error_response, Handler};
use crate::gateway::{Envelope, MsgType};
use crate::ltca::verify_ra_auth;
use crate::store::{ConsumeOutcome, Namespace, Store, WriteMode};
use crate::wire::{Dec, Enc, WireDecode, WireEncode, WireError};

/// Full revocation list. `issued_at` is the time of the latest revocation
/// (0 when empty), so an unchanged revocation state yields a byte-identical
/// CRL, signature included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crl {
    pub issuer_id: AuthorityId,
    pub issued_at: u64,
    /// Sorted, duplicate-free.
    pub revoked_serials: Vec<Serial>,
    pub signature: Sig,
}

impl Crl {
    pub fn tbs_bytes(issuer_id: &str, issued_at: u64, serials: &[Serial]) -> Vec<u8> {
        let mut e = Enc::new();
        e.string(1, issuer_id).u64(2, issued_at).list(3, serials, |s| s.0.to_vec());
        e.finish()
    }

    pub fn verify(&self, pca_key: &PublicKey) -> Result<(), crate::credentials::CredentialError> {
        let tbs = Self::tbs_bytes(self.issuer_id.as_str(), self.issued_at, &self.revoked_serials);
        pca_key.verify(&tbs, &self.signature)
    }

    pub fn contains(&self, serial: Serial) -> bool {
        self.revoked_serials.binary_search(&serial).is_ok()
    }
}

impl WireEncode for Crl {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.string(1, self.issuer_id.as_str())
            .u64(2, self.issued_at)
            .list(3, &self.revoked_serials, |s| s.0.to_vec())
            .bytes(4, &self.signature.0);
        e.finish()
    }
}

impl WireDecode for Crl {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let issuer_id = AuthorityId(d.string(1)?);
        let issued_at = d.u64(2)?;
        let revoked_serials = d.list(3, |v| {
            let arr: [u8; SERIAL_LEN] = v
                .try_into()
                .map_err(|_| WireError::BadScalar { tag: 3, expected: SERIAL_LEN, got: v.len() })?;
            Ok(Serial(arr))
        })?;
        let signature = Sig(d.array(4)?);
        d.finish()?;
        Ok(Crl { issuer_id, issued_at, revoked_serials, signature })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct IssuanceRecord {
    ticket_id: Serial,
    issued_at: u64,
}

impl IssuanceRecord {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.ticket_id.0).u64(2, self.issued_at);
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let ticket_id = Serial(d.array(1)?);
        let issued_at = d.u64(2)?;
        d.finish()?;
        Ok(IssuanceRecord { ticket_id, issued_at })
    }
}

#[derive(Debug, Clone)]
pub struct PcaConfig {
    pub authority_id: AuthorityId,
}

pub struct Pca {
    cfg: PcaConfig,
    key: KeyPair,
    cert: Certificate,
    /// The LTCA certificate whose key signs acceptable tickets.
    ltca_cert: Certificate,
    /// Anchors for verifying presented RA credentials.
    trust_anchors: Vec<Certificate>,
    store: Store,
    clock: Arc<dyn Clock>,
}

type SvcResult<T> = Result<T, ErrorBody>;

fn store_err(e: crate::store::StoreError) -> ErrorBody {
    ErrorBody::new(ErrorCode::StoreUnavailable, e.to_string())
}

impl Pca {
    pub fn new(
        cfg: PcaConfig,
        key: KeyPair,
        cert: Certificate,
        ltca_cert: Certificate,
        trust_anchors: Vec<Certificate>,
        store: Store,
        clock: Arc<dyn Clock>,
    ) -> Arc<Pca> {
        Arc::new(Pca { cfg, key, cert, ltca_cert, trust_anchors, store, clock })
    }

    pub fn certificate(&self) -> &Certificate {
        &self.cert
    }

    pub fn authority_id(&self) -> &AuthorityId {
        &self.cfg.authority_id
    }

    /// The store handle, exposed so tests can flush or inspect backlog.
    pub fn store(&self) -> &Store {
        &self.store
    }

    fn serial_key(serial: Serial) -> String {
        format!("s/{}", serial.to_hex())
    }

    fn ticket_index_key(ticket_id: Serial, serial: Serial) -> String {
        format!("t/{}/{}", ticket_id.to_hex(), serial.to_hex())
    }

    pub fn issue_pseudonyms(&self, req: &IssuePseudonymsReq) -> SvcResult<IssuePseudonymsOkBody> {
        let started = Instant::now();
        let now = self.clock.now();
        let ticket = &req.ticket;

        ticket
            .verify(&self.ltca_cert.subject_public_key)
            .map_err(|_| ErrorBody::new(ErrorCode::BadTicketSignature, "ticket signature does not verify"))?;
        if ticket.target_pca_id != self.cfg.authority_id {
            return Err(ErrorBody::new(
                ErrorCode::WrongPca,
                format!("ticket targets {}, this is {}", ticket.target_pca_id, self.cfg.authority_id),
            ));
        }
        if now >= ticket.t_e {
            return Err(ErrorBody::new(ErrorCode::TicketExpired, "ticket window has ended"));
        }
        let n = req.csrs.len();
        if n == 0 {
            return Err(ErrorBody::new(ErrorCode::InvalidRequest, "empty csr batch"));
        }
        if n as u64 > u64::from(ticket.max_pseudonyms) {
            return Err(ErrorBody::new(
                ErrorCode::TooManyCsrs,
                format!("{n} csrs exceed ticket cap {}", ticket.max_pseudonyms),
            ));
        }
        // A verifying ticket always satisfies these by construction; a
        // malformed one means a broken or hostile LTCA.
        if ticket.max_pseudonyms == 0
            || ticket.t_s >= ticket.t_e
            || !(ticket.t_e - ticket.t_s).is_multiple_of(u64::from(ticket.max_pseudonyms))
        {
            return Err(ErrorBody::new(ErrorCode::InvalidRequest, "malformed ticket window"));
        }
        let tau = ticket.lifetime();

        let mut seen = HashSet::with_capacity(n);
        for (i, csr) in req.csrs.iter().enumerate() {
            if !seen.insert(csr.subject_public_key.0) {
                return Err(ErrorBody::new(
                    ErrorCode::InvalidRequest,
                    format!("csr {i} repeats an earlier public key"),
                ));
            }
            // All-or-nothing: one bad proof fails the batch before the
            // ticket is consumed.
            verify_csr(csr).map_err(|_| {
                ErrorBody::new(ErrorCode::BadProofOfPossession, format!("csr {i} proof of possession"))
                    .with_detail(i as u64)
            })?;
        }

        let ticket_key = ticket.ticket_id.to_hex();
        match self.store.mode() {
            WriteMode::Strict => {
                // Atomic claim: first submission wins, everywhere.
                match self.store.consume_once(Namespace::ConsumedTickets, &ticket_key).map_err(store_err)? {
                    ConsumeOutcome::Won => {}
                    ConsumeOutcome::AlreadyConsumed => {
                        return Err(ErrorBody::new(ErrorCode::TicketAlreadyUsed, "ticket already consumed"));
                    }
                }
            }
            WriteMode::Async { .. } => {
                // Check-then-queue: the marker becomes visible only after
                // the write-behind delay, which is the duplicate window.
                if self
                    .store
                    .get(Namespace::ConsumedTickets, &ticket_key)
                    .map_err(store_err)?
                    .is_some()
                {
                    return Err(ErrorBody::new(ErrorCode::TicketAlreadyUsed, "ticket already consumed"));
                }
                self.store
                    .put(Namespace::ConsumedTickets, &ticket_key, b"1")
                    .map_err(store_err)?;
            }
        }

        let mut pseudonyms = Vec::with_capacity(n);
        for (i, csr) in req.csrs.iter().enumerate() {
            let i = i as u64;
            let tbs = TbsCertificate {
                serial: Serial::random(),
                kind: CertKind::Pseudonym,
                subject_public_key: csr.subject_public_key,
                validity: Validity { start: ticket.t_s + i * tau, end: ticket.t_s + (i + 1) * tau },
                issuer_id: self.cfg.authority_id.clone(),
                subject_id: None,
            };
            let cert = sign_certificate(&self.key, tbs)
                .map_err(|e| ErrorBody::new(ErrorCode::Internal, e.to_string()))?;
            pseudonyms.push(cert);
        }

        let record_time = now;
        for cert in &pseudonyms {
            let record = IssuanceRecord { ticket_id: ticket.ticket_id, issued_at: record_time };
            self.store
                .put(Namespace::IssuanceRecords, &Self::serial_key(cert.serial), &record.encode())
                .map_err(store_err)?;
            self.store
                .put(
                    Namespace::IssuanceRecords,
                    &Self::ticket_index_key(ticket.ticket_id, cert.serial),
                    b"",
                )
                .map_err(store_err)?;
        }

        Ok(IssuePseudonymsOkBody {
            pseudonyms,
            processing_micros: started.elapsed().as_micros() as u64,
        })
    }

    pub fn lookup_ticket(&self, req: &LookupTicketReq) -> SvcResult<Serial> {
        verify_ra_auth(
            &req.ra,
            &LookupTicketReq::auth_bytes(req.pseudonym_serial),
            &self.trust_anchors,
            self.clock.now(),
        )?;
        let bytes = self
            .store
            .get(Namespace::IssuanceRecords, &Self::serial_key(req.pseudonym_serial))
            .map_err(store_err)?
            .ok_or_else(|| ErrorBody::new(ErrorCode::UnknownSerial, "no issuance record"))?;
        let record = IssuanceRecord::decode(&bytes)
            .map_err(|e| ErrorBody::new(ErrorCode::Internal, e.to_string()))?;
        Ok(record.ticket_id)
    }

    pub fn revoke_by_ticket(&self, req: &RevokeByTicketReq) -> SvcResult<Vec<Serial>> {
        let now = self.clock.now();
        verify_ra_auth(
            &req.ra,
            &RevokeByTicketReq::auth_bytes(req.ticket_id),
            &self.trust_anchors,
            now,
        )?;
        let prefix = format!("t/{}/", req.ticket_id.to_hex());
        let items = self.store.scan_prefix(Namespace::IssuanceRecords, &prefix).map_err(store_err)?;
        if items.is_empty() {
            return Err(ErrorBody::new(ErrorCode::UnknownTicket, "no pseudonyms issued under ticket"));
        }
        let mut serials = Vec::with_capacity(items.len());
        let mut newly_revoked = false;
        for (key, _) in items {
            let serial = Serial::from_hex(&key[prefix.len()..])
                .ok_or_else(|| ErrorBody::new(ErrorCode::Internal, "corrupt issuance index"))?;
            serials.push(serial);
            let rkey = format!("r/{}", serial.to_hex());
            // Only first revocation writes, so repeats leave the CRL
            // byte-identical.
            if self.store.get(Namespace::Crl, &rkey).map_err(store_err)?.is_none() {
                let mut e = Enc::new();
                let value = e.bytes(1, &req.ticket_id.0).u64(2, now).finish();
                self.store.put_durable(Namespace::Crl, &rkey, &value).map_err(store_err)?;
                newly_revoked = true;
            }
        }
        if newly_revoked {
            self.store
                .put_durable(Namespace::Crl, "meta/last", &now.to_be_bytes())
                .map_err(store_err)?;
        }
        serials.sort();
        Ok(serials)
    }

    pub fn get_crl(&self) -> SvcResult<Crl> {
        let items = self.store.scan_prefix(Namespace::Crl, "r/").map_err(store_err)?;
        let mut revoked_serials = Vec::with_capacity(items.len());
        for (key, _) in items {
            let serial = Serial::from_hex(&key[2..])
                .ok_or_else(|| ErrorBody::new(ErrorCode::Internal, "corrupt revocation key"))?;
            revoked_serials.push(serial);
        }
        // Scan order is hex order, which matches byte order; keep the
        // sort explicit anyway since the signature covers it.
        revoked_serials.sort();
        let issued_at = match self.store.get(Namespace::Crl, "meta/last").map_err(store_err)? {
            None => 0,
            Some(bytes) => u64::from_be_bytes(
                bytes
                    .as_slice()
                    .try_into()
                    .map_err(|_| ErrorBody::new(ErrorCode::Internal, "corrupt crl meta"))?,
            ),
        };
        let tbs = Crl::tbs_bytes(self.cfg.authority_id.as_str(), issued_at, &revoked_serials);
        Ok(Crl {
            issuer_id: self.cfg.authority_id.clone(),
            issued_at,
            revoked_serials,
            signature: self.key.sign(&tbs),
        })
    }

    /// Crypto-path dry run for liveness probes: verify a throwaway CSR and
    /// sign one pseudonym for it, without touching the store.
    pub fn health_dry_run(&self) -> SvcResult<HealthCheckOkBody> {
        let kp = KeyPair::generate();
        let csr = crate::credentials::make_csr(&kp);
        verify_csr(&csr).map_err(|e| ErrorBody::new(ErrorCode::Internal, format!("dry-run: {e}")))?;
        let cert = sign_certificate(
            &self.key,
            TbsCertificate {
                serial: Serial::random(),
                kind: CertKind::Pseudonym,
                subject_public_key: csr.subject_public_key,
                validity: Validity { start: 0, end: 1 },
                issuer_id: self.cfg.authority_id.clone(),
                subject_id: None,
            },
        )
        .map_err(|e| ErrorBody::new(ErrorCode::Internal, format!("dry-run: {e}")))?;
        cert.verify_signature(&self.key.public())
            .map_err(|e| ErrorBody::new(ErrorCode::Internal, format!("dry-run: {e}")))?;
        Ok(HealthCheckOkBody { detail: "pseudonym-dry-run".into() })
    }
}

fn decode_or_invalid<T: WireDecode>(body: &[u8]) -> SvcResult<T> {
    T::decode(body).map_err(|e| ErrorBody::new(ErrorCode::InvalidRequest, e.to_string()))
}

#[async_trait::async_trait]
impl Handler for Pca {
    async fn handle(&self, env: Envelope) -> Envelope {
        let id = env.correlation_id;
        let result: SvcResult<(MsgType, Vec<u8>)> = (|| {
            Ok(match env.msg_type {
                MsgType::IssuePseudonyms => {
                    let req: IssuePseudonymsReq = decode_or_invalid(&env.body)?;
                    (MsgType::IssuePseudonymsOk, self.issue_pseudonyms(&req)?.encode())
                }
                MsgType::LookupTicket => {
                    let req: LookupTicketReq = decode_or_invalid(&env.body)?;
                    let ticket_id = self.lookup_ticket(&req)?;
                    (MsgType::LookupTicketOk, LookupTicketOkBody { ticket_id }.encode())
                }
                MsgType::RevokeByTicket => {
                    let req: RevokeByTicketReq = decode_or_invalid(&env.body)?;
                    let revoked_serials = self.revoke_by_ticket(&req)?;
                    (MsgType::RevokeByTicketOk, RevokeByTicketOkBody { revoked_serials }.encode())
                }
                MsgType::GetCrl => (MsgType::GetCrlOk, GetCrlOkBody { crl: self.get_crl()? }.encode()),
                MsgType::HealthCheck => (MsgType::HealthCheckOk, self.health_dry_run()?.encode()),
                MsgType::GetServiceInfo => (
                    MsgType::GetServiceInfoOk,
                    ServiceInfoBody {
                        kind: 2,
                        authority_id: self.cfg.authority_id.0.clone(),
                        certificate: self.cert.clone(),
                    }
                    .encode(),
                ),
                other => {
                    return Err(ErrorBody::new(
                        ErrorCode::InvalidRequest,
                        format!("pca does not serve {other:?}"),
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::credentials::make_csr;
    use crate::gateway::messages::RaAuth;
    use crate::ltca::Ticket;
    use crate::testutil::{make_domain, Domain};

    const T0: u64 = 1_000_000_200;

    struct Fixture {
        domain: Domain,
        pca: Arc<Pca>,
        clock: Arc<ManualClock>,
    }

    fn fixture(mode: WriteMode) -> Fixture {
        let domain = make_domain();
        let clock = ManualClock::at(T0);
        let pca = Pca::new(
            PcaConfig { authority_id: AuthorityId::new("pca-1") },
            domain.pca_key.clone(),
            domain.pca_cert.clone(),
            domain.ltca_cert.clone(),
            vec![domain.root_cert.clone()],
            Store::open("mem://", mode).unwrap(),
            clock.clone(),
        );
        Fixture { domain, pca, clock }
    }

    fn make_ticket(domain: &Domain, t_s: u64, tau: u64, max: u32, pca_id: &str) -> Ticket {
        let ticket_id = Serial::random();
        let t_e = t_s + tau * u64::from(max);
        let tbs = Ticket::tbs_bytes(ticket_id, pca_id, t_s, t_e, max);
        Ticket {
            ticket_id,
            target_pca_id: AuthorityId::new(pca_id),
            t_s,
            t_e,
            max_pseudonyms: max,
            signature: domain.ltca_key.sign(&tbs),
        }
    }

    fn batch(n: usize) -> (Vec<KeyPair>, Vec<crate::credentials::Csr>) {
        let keys: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate()).collect();
        let csrs = keys.iter().map(make_csr).collect();
        (keys, csrs)
    }

    fn ra(domain: &Domain, auth_bytes: &[u8]) -> RaAuth {
        RaAuth { certificate: domain.ra_cert.clone(), signature: domain.ra_key.sign(auth_bytes) }
    }

    #[test]
    fn twelve_slot_tiling_oracle() {
        // Slicing oracle: enumerate the twelve intervals by hand and assert
        // the batch tiles the window exactly, no gaps, no overlap.
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 12, "pca-1");
        let (_keys, csrs) = batch(12);
        let out = f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs: csrs.clone() }).unwrap();
        assert_eq!(out.pseudonyms.len(), 12);

        let expected: Vec<(u64, u64)> =
            (0..12u64).map(|i| (T0 + 300 * i, T0 + 300 * (i + 1))).collect();
        let got: Vec<(u64, u64)> =
            out.pseudonyms.iter().map(|c| (c.validity.start, c.validity.end)).collect();
        assert_eq!(got, expected);

        // Exact cover: consecutive intervals abut; union is the window.
        for w in got.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
        assert_eq!(got.first().unwrap().0, T0);
        assert_eq!(got.last().unwrap().1, T0 + 3600);

        // Order binding: pseudonym i certifies csr i's key.
        for (cert, csr) in out.pseudonyms.iter().zip(&csrs) {
            assert_eq!(cert.subject_public_key, csr.subject_public_key);
            assert_eq!(cert.kind, CertKind::Pseudonym);
        }
    }

    #[test]
    fn hundred_csr_batch_all_chain_verifiable() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 36, 100, "pca-1");
        let (_keys, csrs) = batch(100);
        let out = f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs }).unwrap();
        assert_eq!(out.pseudonyms.len(), 100);
        let mut serials = HashSet::new();
        for cert in &out.pseudonyms {
            crate::credentials::verify_chain(
                cert,
                std::slice::from_ref(&f.domain.pca_cert),
                std::slice::from_ref(&f.domain.root_cert),
                cert.validity.start,
            )
            .unwrap();
            assert!(serials.insert(cert.serial), "pseudonym serials must be unique");
        }
    }

    #[test]
    fn strict_second_submission_rejected() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 4, "pca-1");
        let (_k, csrs) = batch(4);
        f.pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs: csrs.clone() })
            .unwrap();
        let err = f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs }).unwrap_err();
        assert_eq!(err.code, ErrorCode::TicketAlreadyUsed);
    }

    #[test]
    fn partial_batch_smaller_than_max_allowed() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 12, "pca-1");
        let (_k, csrs) = batch(5);
        let out = f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs }).unwrap();
        assert_eq!(out.pseudonyms.len(), 5);
        // Prefix of the window: starts at t_s.
        assert_eq!(out.pseudonyms[0].validity.start, T0);
        assert_eq!(out.pseudonyms[4].validity.end, T0 + 5 * 300);
    }

    #[test]
    fn too_many_csrs_rejected() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 4, "pca-1");
        let (_k, csrs) = batch(5);
        let err = f
            .pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs })
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::TooManyCsrs);
        // Failed validation must not consume the ticket.
        let (_k2, csrs2) = batch(4);
        f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs: csrs2 }).unwrap();
    }

    #[test]
    fn bad_pop_fails_whole_batch_without_consuming() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 6, "pca-1");
        let (_k, mut csrs) = batch(6);
        // Corrupt the proof on csr 3 by swapping in another key's proof.
        csrs[3].pop_signature = csrs[2].pop_signature;
        let err = f
            .pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs })
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::BadProofOfPossession);
        assert_eq!(err.detail, Some(3));
        // All-or-nothing: nothing was issued, ticket still usable.
        let (_k2, good) = batch(6);
        let out = f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs: good }).unwrap();
        assert_eq!(out.pseudonyms.len(), 6);
    }

    #[test]
    fn duplicate_csr_key_rejected() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 4, "pca-1");
        let kp = KeyPair::generate();
        let csr = make_csr(&kp);
        let err = f
            .pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs: vec![csr.clone(), csr] })
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::InvalidRequest);
    }

    #[test]
    fn wrong_pca_and_expiry() {
        let f = fixture(WriteMode::Strict);
        let (_k, csrs) = batch(2);
        let foreign = make_ticket(&f.domain, T0, 300, 2, "pca-9");
        let err = f
            .pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: foreign, csrs: csrs.clone() })
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::WrongPca);

        let ticket = make_ticket(&f.domain, T0, 300, 2, "pca-1");
        f.clock.set(ticket.t_e); // half-open window: t_e is expired
        let err = f
            .pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs: csrs.clone() })
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::TicketExpired);

        // One second before the end, issuance is still allowed.
        f.clock.set(ticket.t_e - 1);
        f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs }).unwrap();
    }

    #[test]
    fn forged_ticket_rejected() {
        let f = fixture(WriteMode::Strict);
        let forger = KeyPair::generate();
        let ticket_id = Serial::random();
        let tbs = Ticket::tbs_bytes(ticket_id, "pca-1", T0, T0 + 600, 2);
        let forged = Ticket {
            ticket_id,
            target_pca_id: AuthorityId::new("pca-1"),
            t_s: T0,
            t_e: T0 + 600,
            max_pseudonyms: 2,
            signature: forger.sign(&tbs),
        };
        let (_k, csrs) = batch(2);
        let err = f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket: forged, csrs }).unwrap_err();
        assert_eq!(err.code, ErrorCode::BadTicketSignature);
    }

    #[test]
    fn revocation_by_ticket_idempotent_and_crl() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 12, "pca-1");
        let (_k, csrs) = batch(12);
        let out = f
            .pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs })
            .unwrap();

        // Empty CRL first: signed, zero entries.
        let crl0 = f.pca.get_crl().unwrap();
        assert!(crl0.revoked_serials.is_empty());
        assert_eq!(crl0.issued_at, 0);
        crl0.verify(&f.domain.pca_key.public()).unwrap();

        let req = RevokeByTicketReq {
            ticket_id: ticket.ticket_id,
            ra: ra(&f.domain, &RevokeByTicketReq::auth_bytes(ticket.ticket_id)),
        };
        let revoked = f.pca.revoke_by_ticket(&req).unwrap();
        assert_eq!(revoked.len(), 12);
        let mut expect: Vec<Serial> = out.pseudonyms.iter().map(|c| c.serial).collect();
        expect.sort();
        assert_eq!(revoked, expect);

        let crl1 = f.pca.get_crl().unwrap();
        assert_eq!(crl1.revoked_serials, expect);
        crl1.verify(&f.domain.pca_key.public()).unwrap();
        for s in &expect {
            assert!(crl1.contains(*s));
        }

        // Repeat revocation: same serials, CRL byte-identical.
        f.clock.advance(100);
        let again = f.pca.revoke_by_ticket(&req).unwrap();
        assert_eq!(again, expect);
        let crl2 = f.pca.get_crl().unwrap();
        assert_eq!(crl2.encode(), crl1.encode());
    }

    #[test]
    fn crl_deterministic_between_calls() {
        let f = fixture(WriteMode::Strict);
        let a = f.pca.get_crl().unwrap();
        let b = f.pca.get_crl().unwrap();
        assert_eq!(a.encode(), b.encode());
    }

    #[test]
    fn unknown_ticket_revocation() {
        let f = fixture(WriteMode::Strict);
        let missing = Serial::random();
        let err = f
            .pca
            .revoke_by_ticket(&RevokeByTicketReq {
                ticket_id: missing,
                ra: ra(&f.domain, &RevokeByTicketReq::auth_bytes(missing)),
            })
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownTicket);
    }

    #[test]
    fn lookup_ticket_roundtrip() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 3, "pca-1");
        let (_k, csrs) = batch(3);
        let out = f
            .pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs })
            .unwrap();
        for cert in &out.pseudonyms {
            let got = f
                .pca
                .lookup_ticket(&LookupTicketReq {
                    pseudonym_serial: cert.serial,
                    ra: ra(&f.domain, &LookupTicketReq::auth_bytes(cert.serial)),
                })
                .unwrap();
            assert_eq!(got, ticket.ticket_id);
        }
        let missing = Serial::random();
        let err = f
            .pca
            .lookup_ticket(&LookupTicketReq {
                pseudonym_serial: missing,
                ra: ra(&f.domain, &LookupTicketReq::auth_bytes(missing)),
            })
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::UnknownSerial);
    }

    #[test]
    fn non_ra_caller_unauthorized() {
        let f = fixture(WriteMode::Strict);
        let serial = Serial::random();
        // A vehicle-grade certificate, even a genuine one, is not an RA
        // credential.
        let kp = KeyPair::generate();
        let fake = RaAuth {
            certificate: f.domain.pca_cert.clone(),
            signature: kp.sign(&LookupTicketReq::auth_bytes(serial)),
        };
        let err = f
            .pca
            .lookup_ticket(&LookupTicketReq { pseudonym_serial: serial, ra: fake })
            .unwrap_err();
        assert_eq!(err.code, ErrorCode::Unauthorized);
    }

    #[test]
    fn async_mode_queues_marker_and_allows_duplicate_until_flush() {
        let f = fixture(WriteMode::Async { delay_ms: 100 });
        let ticket = make_ticket(&f.domain, T0, 300, 2, "pca-1");
        let (_k1, csrs1) = batch(2);
        let (_k2, csrs2) = batch(2);
        f.pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs: csrs1 })
            .unwrap();
        // Marker still queued: duplicate goes through. This is the paper's
        // async-storage window reproduced deterministically.
        f.pca
            .issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs: csrs2 })
            .unwrap();
        f.pca.store().flush();
        let (_k3, csrs3) = batch(2);
        let err = f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket, csrs: csrs3 }).unwrap_err();
        assert_eq!(err.code, ErrorCode::TicketAlreadyUsed);
    }

    #[test]
    fn no_vehicle_identifiers_in_pca_state() {
        // Anonymity boundary: nothing the PCA persists may contain a
        // vehicle id or LTC serial. Issue under a ticket, then sweep every
        // namespace for the fixture's identifiers.
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 4, "pca-1");
        let (_k, csrs) = batch(4);
        f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs }).unwrap();
        f.pca
            .revoke_by_ticket(&RevokeByTicketReq {
                ticket_id: ticket.ticket_id,
                ra: ra(&f.domain, &RevokeByTicketReq::auth_bytes(ticket.ticket_id)),
            })
            .unwrap();

        let vehicle_id = b"veh-1".as_slice();
        let ltc_serial_hex = Serial([0xAB; 16]).to_hex();
        for ns in [
            Namespace::Vehicles,
            Namespace::TicketsLedger,
            Namespace::ConsumedTickets,
            Namespace::IssuanceRecords,
            Namespace::Crl,
        ] {
            for (key, value) in f.pca.store().scan_prefix(ns, "").unwrap() {
                assert!(!key.as_bytes().windows(vehicle_id.len()).any(|w| w == vehicle_id));
                assert!(!value.windows(vehicle_id.len()).any(|w| w == vehicle_id));
                assert!(!key.contains(&ltc_serial_hex));
            }
        }
        // And the vehicle namespaces are simply empty at a PCA.
        assert!(f.pca.store().scan_prefix(Namespace::Vehicles, "").unwrap().is_empty());
        assert!(f.pca.store().scan_prefix(Namespace::TicketsLedger, "").unwrap().is_empty());
    }

    #[test]
    fn health_dry_run_ok() {
        let f = fixture(WriteMode::Strict);
        assert_eq!(f.pca.health_dry_run().unwrap().detail, "pseudonym-dry-run");
    }

    #[test]
    fn crl_wire_roundtrip() {
        let f = fixture(WriteMode::Strict);
        let ticket = make_ticket(&f.domain, T0, 300, 2, "pca-1");
        let (_k, csrs) = batch(2);
        f.pca.issue_pseudonyms(&IssuePseudonymsReq { ticket: ticket.clone(), csrs }).unwrap();
        f.pca
            .revoke_by_ticket(&RevokeByTicketReq {
                ticket_id: ticket.ticket_id,
                ra: ra(&f.domain, &RevokeByTicketReq::auth_bytes(ticket.ticket_id)),
            })
            .unwrap();
        let crl = f.pca.get_crl().unwrap();
        let bytes = crl.encode();
        let back = Crl::decode(&bytes).unwrap();
        assert_eq!(back, crl);
        assert_eq!(back.encode(), bytes);
    }
}
