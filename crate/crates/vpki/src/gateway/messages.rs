//! Typed message bodies for every request and response, with their
//! canonical encodings. Requests that need caller authentication carry
//! either an LTC-holder signature (ticket issuance) or an `RaAuth` block
//! (resolution and revocation); in both cases the signature covers the
//! operation's `auth_bytes`, which embed the message type for domain
//! separation.

use crate::credentials::{
    Certificate, Csr, PublicKey, Serial, Sig, PUBLIC_KEY_LEN, SERIAL_LEN, SIGNATURE_LEN,
};
use crate::ltca::Ticket;
use crate::pca::Crl;
use crate::ra::ResolutionResult;
use crate::wire::{Dec, Enc, WireDecode, WireEncode, WireError};

use super::MsgType;

/// Stable numeric error codes carried in `ErrorBody`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    Internal = 1,
    InvalidRequest = 2,
    Unauthorized = 3,
    BadAuth = 4,
    RevokedLtc = 5,
    ExpiredLtc = 6,
    WindowTooLarge = 7,
    DuplicateRegistration = 8,
    UnknownTicket = 9,
    UnknownSerial = 10,
    BadTicketSignature = 11,
    WrongPca = 12,
    TicketExpired = 13,
    TicketAlreadyUsed = 14,
    TooManyCsrs = 15,
    BadProofOfPossession = 16,
    UpstreamUnavailable = 17,
    PartialFailure = 18,
    StoreUnavailable = 19,
    Draining = 20,
}

impl ErrorCode {
    pub fn from_u16(v: u16) -> Option<ErrorCode> {
        use ErrorCode::*;
        Some(match v {
            1 => Internal,
            2 => InvalidRequest,
            3 => Unauthorized,
            4 => BadAuth,
            5 => RevokedLtc,
            6 => ExpiredLtc,
            7 => WindowTooLarge,
            8 => DuplicateRegistration,
            9 => UnknownTicket,
            10 => UnknownSerial,
            11 => BadTicketSignature,
            12 => WrongPca,
            13 => TicketExpired,
            14 => TicketAlreadyUsed,
            15 => TooManyCsrs,
            16 => BadProofOfPossession,
            17 => UpstreamUnavailable,
            18 => PartialFailure,
            19 => StoreUnavailable,
            20 => Draining,
            _ => return None,
        })
    }
}

/// Body of the universal `Error` response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    /// Which stage or upstream leg failed, when the operation has several.
    pub step: Option<String>,
    /// Operation-specific detail, e.g. the index of an offending CSR.
    pub detail: Option<u64>,
}

impl ErrorBody {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ErrorBody { code, message: message.into(), step: None, detail: None }
    }

    pub fn with_step(mut self, step: impl Into<String>) -> Self {
        self.step = Some(step.into());
        self
    }

    pub fn with_detail(mut self, detail: u64) -> Self {
        self.detail = Some(detail);
        self
    }
}

impl WireEncode for ErrorBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.u16(1, self.code as u16)
            .string(2, &self.message)
            .opt_string(3, self.step.as_deref());
        if let Some(d) = self.detail {
            e.u64(4, d);
        }
        e.finish()
    }
}

impl WireDecode for ErrorBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let raw = d.u16(1)?;
        let code = ErrorCode::from_u16(raw)
            .ok_or(WireError::BadEnum { tag: 1, value: u64::from(raw) })?;
        let message = d.string(2)?;
        let step = d.opt_string(3)?;
        let detail = d.opt_u64(4)?;
        d.finish()?;
        Ok(ErrorBody { code, message, step, detail })
    }
}

fn serial_item(tag: u8) -> impl FnMut(&[u8]) -> Result<Serial, WireError> {
    move |v: &[u8]| {
        let arr: [u8; SERIAL_LEN] = v
            .try_into()
            .map_err(|_| WireError::BadScalar { tag, expected: SERIAL_LEN, got: v.len() })?;
        Ok(Serial(arr))
    }
}

fn sig_field(d: &mut Dec, tag: u8) -> Result<Sig, WireError> {
    Ok(Sig(d.array::<SIGNATURE_LEN>(tag)?))
}

fn key_field(d: &mut Dec, tag: u8) -> Result<PublicKey, WireError> {
    Ok(PublicKey(d.array::<PUBLIC_KEY_LEN>(tag)?))
}

macro_rules! empty_body {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
        pub struct $name;

        impl WireEncode for $name {
            fn encode(&self) -> Vec<u8> {
                Vec::new()
            }
        }

        impl WireDecode for $name {
            fn decode(bytes: &[u8]) -> Result<Self, WireError> {
                Dec::new(bytes).finish()?;
                Ok($name)
            }
        }
    };
}

// ---- plumbing messages ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EchoBody {
    pub payload: Vec<u8>,
}

impl WireEncode for EchoBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.payload);
        e.finish()
    }
}

impl WireDecode for EchoBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let payload = d.bytes(1)?;
        d.finish()?;
        Ok(EchoBody { payload })
    }
}

empty_body!(HealthCheckReq);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealthCheckOkBody {
    /// What the dry-run exercised, e.g. "ticket-dry-run".
    pub detail: String,
}

impl WireEncode for HealthCheckOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.string(1, &self.detail);
        e.finish()
    }
}

impl WireDecode for HealthCheckOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let detail = d.string(1)?;
        d.finish()?;
        Ok(HealthCheckOkBody { detail })
    }
}

empty_body!(GetServiceInfoReq);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceInfoBody {
    /// 1 = LTCA, 2 = PCA, 3 = RA.
    pub kind: u8,
    pub authority_id: String,
    pub certificate: Certificate,
}

impl WireEncode for ServiceInfoBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.u8(1, self.kind).string(2, &self.authority_id).bytes(3, &self.certificate.encode());
        e.finish()
    }
}

impl WireDecode for ServiceInfoBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let kind = d.u8(1)?;
        let authority_id = d.string(2)?;
        let certificate = Certificate::decode(d.raw(3)?)?;
        d.finish()?;
        Ok(ServiceInfoBody { kind, authority_id, certificate })
    }
}

empty_body!(PodStatsReq);

/// Cumulative counters since pod start; the orchestrator differences two
/// samples to get a busy-time fraction over the sampling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PodStatsBody {
    pub busy_nanos: u64,
    pub uptime_nanos: u64,
    pub concurrency_slots: u32,
    pub requests_handled: u64,
    pub draining: bool,
}

impl WireEncode for PodStatsBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.u64(1, self.busy_nanos)
            .u64(2, self.uptime_nanos)
            .u32(3, self.concurrency_slots)
            .u64(4, self.requests_handled)
            .bool(5, self.draining);
        e.finish()
    }
}

impl WireDecode for PodStatsBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let busy_nanos = d.u64(1)?;
        let uptime_nanos = d.u64(2)?;
        let concurrency_slots = d.u32(3)?;
        let requests_handled = d.u64(4)?;
        let draining = d.bool(5)?;
        d.finish()?;
        Ok(PodStatsBody {
            busy_nanos,
            uptime_nanos,
            concurrency_slots,
            requests_handled,
            draining,
        })
    }
}

/// Fault injection for orchestration tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Clear any injected fault.
    None,
    /// Stop answering every request, including health probes.
    DropAll,
    /// Delay every response by the given amount.
    DelayMs(u64),
    /// Exit the process/task abruptly.
    Crash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectFaultBody {
    pub fault: Fault,
}

impl WireEncode for InjectFaultBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        match self.fault {
            Fault::None => e.u8(1, 0),
            Fault::DropAll => e.u8(1, 1),
            Fault::DelayMs(ms) => e.u8(1, 2).u64(2, ms),
            Fault::Crash => e.u8(1, 3),
        };
        e.finish()
    }
}

impl WireDecode for InjectFaultBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let kind = d.u8(1)?;
        let fault = match kind {
            0 => Fault::None,
            1 => Fault::DropAll,
            2 => Fault::DelayMs(d.u64(2)?),
            3 => Fault::Crash,
            v => return Err(WireError::BadEnum { tag: 1, value: u64::from(v) }),
        };
        d.finish()?;
        Ok(InjectFaultBody { fault })
    }
}

empty_body!(InjectFaultOkBody);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShutdownBody {
    /// Finish in-flight requests before stopping.
    pub drain: bool,
}

impl WireEncode for ShutdownBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bool(1, self.drain);
        e.finish()
    }
}

impl WireDecode for ShutdownBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let drain = d.bool(1)?;
        d.finish()?;
        Ok(ShutdownBody { drain })
    }
}

empty_body!(ShutdownOkBody);

// ---- LTCA messages ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterVehicleReq {
    pub vehicle_id: String,
    pub public_key: PublicKey,
    pub start: u64,
    pub end: u64,
}

impl WireEncode for RegisterVehicleReq {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.string(1, &self.vehicle_id)
            .bytes(2, &self.public_key.0)
            .u64(3, self.start)
            .u64(4, self.end);
        e.finish()
    }
}

impl WireDecode for RegisterVehicleReq {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let vehicle_id = d.string(1)?;
        let public_key = key_field(&mut d, 2)?;
        let start = d.u64(3)?;
        let end = d.u64(4)?;
        d.finish()?;
        Ok(RegisterVehicleReq { vehicle_id, public_key, start, end })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterVehicleOkBody {
    pub ltc: Certificate,
}

impl WireEncode for RegisterVehicleOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.ltc.encode());
        e.finish()
    }
}

impl WireDecode for RegisterVehicleOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let ltc = Certificate::decode(d.raw(1)?)?;
        d.finish()?;
        Ok(RegisterVehicleOkBody { ltc })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssueTicketReq {
    pub start: u64,
    pub duration: u64,
    pub target_pca_id: String,
    pub ltc_serial: Serial,
    /// LTC-holder signature over `auth_bytes`.
    pub signature: Sig,
}

impl IssueTicketReq {
    /// Bytes the vehicle signs: message type plus the request fields.
    pub fn auth_bytes(
        start: u64,
        duration: u64,
        target_pca_id: &str,
        ltc_serial: Serial,
    ) -> Vec<u8> {
        let mut e = Enc::new();
        e.u16(1, MsgType::IssueTicket as u16)
            .u64(2, start)
            .u64(3, duration)
            .string(4, target_pca_id)
            .bytes(5, &ltc_serial.0);
        e.finish()
    }
}

impl WireEncode for IssueTicketReq {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.u64(1, self.start)
            .u64(2, self.duration)
            .string(3, &self.target_pca_id)
            .bytes(4, &self.ltc_serial.0)
            .bytes(5, &self.signature.0);
        e.finish()
    }
}

impl WireDecode for IssueTicketReq {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let start = d.u64(1)?;
        let duration = d.u64(2)?;
        let target_pca_id = d.string(3)?;
        let ltc_serial = Serial(d.array(4)?);
        let signature = sig_field(&mut d, 5)?;
        d.finish()?;
        Ok(IssueTicketReq { start, duration, target_pca_id, ltc_serial, signature })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssueTicketOkBody {
    pub ticket: Ticket,
}

impl WireEncode for IssueTicketOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.ticket.encode());
        e.finish()
    }
}

impl WireDecode for IssueTicketOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let ticket = Ticket::decode(d.raw(1)?)?;
        d.finish()?;
        Ok(IssueTicketOkBody { ticket })
    }
}

/// RA credential block attached to privileged requests: the RA's
/// certificate plus its signature over the operation's `auth_bytes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaAuth {
    pub certificate: Certificate,
    pub signature: Sig,
}

impl RaAuth {
    const CERT_TAG: u8 = 14;
    const SIG_TAG: u8 = 15;

    fn encode_into(&self, e: &mut Enc) {
        e.bytes(Self::CERT_TAG, &self.certificate.encode())
            .bytes(Self::SIG_TAG, &self.signature.0);
    }

    fn decode_from(d: &mut Dec) -> Result<Self, WireError> {
        let certificate = Certificate::decode(d.raw(Self::CERT_TAG)?)?;
        let signature = sig_field(d, Self::SIG_TAG)?;
        Ok(RaAuth { certificate, signature })
    }
}

/// Privileged single-serial requests share one shape: a serial plus the RA
/// credential. The message type in `auth_bytes` keeps their signatures
/// non-interchangeable.
macro_rules! ra_serial_request {
    ($(#[$meta:meta])* $name:ident, $msg_type:expr, $field:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct $name {
            pub $field: Serial,
            pub ra: RaAuth,
        }

        impl $name {
            pub fn auth_bytes(serial: Serial) -> Vec<u8> {
                let mut e = Enc::new();
                e.u16(1, $msg_type as u16).bytes(2, &serial.0);
                e.finish()
            }
        }

        impl WireEncode for $name {
            fn encode(&self) -> Vec<u8> {
                let mut e = Enc::new();
                e.bytes(1, &self.$field.0);
                self.ra.encode_into(&mut e);
                e.finish()
            }
        }

        impl WireDecode for $name {
            fn decode(bytes: &[u8]) -> Result<Self, WireError> {
                let mut d = Dec::new(bytes);
                let $field = Serial(d.array(1)?);
                let ra = RaAuth::decode_from(&mut d)?;
                d.finish()?;
                Ok($name { $field, ra })
            }
        }
    };
}

ra_serial_request!(ResolveTicketReq, MsgType::ResolveTicket, ticket_id);
ra_serial_request!(ListTicketsReq, MsgType::ListTickets, ltc_serial);
ra_serial_request!(RevokeLtcReq, MsgType::RevokeLtc, ltc_serial);
ra_serial_request!(LookupTicketReq, MsgType::LookupTicket, pseudonym_serial);
ra_serial_request!(RevokeByTicketReq, MsgType::RevokeByTicket, ticket_id);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolveTicketOkBody {
    pub ltc_serial: Serial,
}

impl WireEncode for ResolveTicketOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.ltc_serial.0);
        e.finish()
    }
}

impl WireDecode for ResolveTicketOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let ltc_serial = Serial(d.array(1)?);
        d.finish()?;
        Ok(ResolveTicketOkBody { ltc_serial })
    }
}

/// One ledgered ticket reference: enough for the RA to route a revocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketRef {
    pub ticket_id: Serial,
    pub target_pca_id: String,
}

impl TicketRef {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.ticket_id.0).string(2, &self.target_pca_id);
        e.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let ticket_id = Serial(d.array(1)?);
        let target_pca_id = d.string(2)?;
        d.finish()?;
        Ok(TicketRef { ticket_id, target_pca_id })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListTicketsOkBody {
    pub tickets: Vec<TicketRef>,
}

impl WireEncode for ListTicketsOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.list(1, &self.tickets, TicketRef::encode);
        e.finish()
    }
}

impl WireDecode for ListTicketsOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let tickets = d.list(1, TicketRef::decode)?;
        d.finish()?;
        Ok(ListTicketsOkBody { tickets })
    }
}

empty_body!(RevokeLtcOkBody);

// ---- PCA messages ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuePseudonymsReq {
    pub ticket: Ticket,
    pub csrs: Vec<Csr>,
}

impl WireEncode for IssuePseudonymsReq {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.ticket.encode()).list(2, &self.csrs, Csr::encode);
        e.finish()
    }
}

impl WireDecode for IssuePseudonymsReq {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let ticket = Ticket::decode(d.raw(1)?)?;
        let csrs = d.list(2, Csr::decode)?;
        d.finish()?;
        Ok(IssuePseudonymsReq { ticket, csrs })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuePseudonymsOkBody {
    pub pseudonyms: Vec<Certificate>,
    /// Server-side handler time for this batch, for benchmarking.
    pub processing_micros: u64,
}

impl WireEncode for IssuePseudonymsOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.list(1, &self.pseudonyms, Certificate::encode).u64(2, self.processing_micros);
        e.finish()
    }
}

impl WireDecode for IssuePseudonymsOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let pseudonyms = d.list(1, Certificate::decode)?;
        let processing_micros = d.u64(2)?;
        d.finish()?;
        Ok(IssuePseudonymsOkBody { pseudonyms, processing_micros })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LookupTicketOkBody {
    pub ticket_id: Serial,
}

impl WireEncode for LookupTicketOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.ticket_id.0);
        e.finish()
    }
}

impl WireDecode for LookupTicketOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let ticket_id = Serial(d.array(1)?);
        d.finish()?;
        Ok(LookupTicketOkBody { ticket_id })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevokeByTicketOkBody {
    pub revoked_serials: Vec<Serial>,
}

impl WireEncode for RevokeByTicketOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.list(1, &self.revoked_serials, |s| s.0.to_vec());
        e.finish()
    }
}

impl WireDecode for RevokeByTicketOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let revoked_serials = d.list(1, serial_item(1))?;
        d.finish()?;
        Ok(RevokeByTicketOkBody { revoked_serials })
    }
}

empty_body!(GetCrlReq);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetCrlOkBody {
    pub crl: Crl,
}

impl WireEncode for GetCrlOkBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.crl.encode());
        e.finish()
    }
}

impl WireDecode for GetCrlOkBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let crl = Crl::decode(d.raw(1)?)?;
        d.finish()?;
        Ok(GetCrlOkBody { crl })
    }
}

// ---- RA messages ----

///// Resolution requests carry no RA block: the caller talks to the RA, and
/// the RA authenticates itself to the authorities it contacts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolveReq {
    pub pseudonym_serial: Serial,
}

impl WireEncode for ResolveReq {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.pseudonym_serial.0);
        e.finish()
    }
}

impl WireDecode for ResolveReq {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let pseudonym_serial = Serial(d.array(1)?);
        d.finish()?;
        Ok(ResolveReq { pseudonym_serial })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolutionResultBody {
    pub result: ResolutionResult,
}

impl WireEncode for ResolutionResultBody {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(1, &self.result.pseudonym_serial.0)
            .bytes(2, &self.result.ticket_id.0)
            .bytes(3, &self.result.ltc_serial.0)
            .list(4, &self.result.revoked_pseudonym_serials, |s| s.0.to_vec());
        e.finish()
    }
}

impl WireDecode for ResolutionResultBody {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let pseudonym_serial = Serial(d.array(1)?);
        let ticket_id = Serial(d.array(2)?);
        let ltc_serial = Serial(d.array(3)?);
        let revoked_pseudonym_serials = d.list(4, serial_item(4))?;
        d.finish()?;
        Ok(ResolutionResultBody {
            result: ResolutionResult {
                pseudonym_serial,
                ticket_id,
                ltc_serial,
                revoked_pseudonym_serials,
            },
        })
    }
}
