//! Key generation, certificate and CSR encoding, signing, and verification
//! shared by every service and client.
//!
//! Certificates use a compact canonical binary form (see
//! `docs/wire-format.md`), not X.509: the to-be-signed bytes are the
//! certificate's tagged fields minus the signature, so signatures are
//! byte-exact reproducible across services. Signing is ECDSA over the
//! NIST P-256 curve with SHA-256, deterministic per RFC 6979.

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use rand::RngCore;

use crate::wire::{Dec, Enc, WireDecode, WireEncode, WireError};

pub const SERIAL_LEN: usize = 16;
pub const PUBLIC_KEY_LEN: usize = 33; // SEC1 compressed point
pub const SIGNATURE_LEN: usize = 64; // fixed-width r || s

macro_rules! fmt_hex_newtype {
    ($name:literal) => {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            write!(f, concat!($name, "({})"), hex::encode(self.0))
        }
    };
}

/// 128-bit identifier for certificates and tickets, drawn from a
/// cryptographic RNG rather than a sequence so issuance order cannot be
/// inferred from serial values.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Serial(pub [u8; SERIAL_LEN]);

impl Serial {
    pub fn random() -> Self {
        let mut bytes = [0u8; SERIAL_LEN];
        OsRng.fill_bytes(&mut bytes);
        Serial(bytes)
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; SERIAL_LEN] = bytes.try_into().ok()?;
        Some(Serial(arr))
    }
}

impl std::fmt::Debug for Serial {
    fmt_hex_newtype!("Serial");
}

impl std::fmt::Display for Serial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Identifier of a certification authority ("rca", "ltca", "pca-1", ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AuthorityId(pub String);

impl AuthorityId {
    pub fn new(s: impl Into<String>) -> Self {
        AuthorityId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for AuthorityId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Supported signature curves. Only P-256 is implemented; the knob exists
/// so deployments state their choice explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveId {
    P256,
}

impl CurveId {
    pub fn parse(s: &str) -> Result<Self, CredentialError> {
        match s {
            "p256" | "P256" | "prime256v1" | "secp256r1" => Ok(CurveId::P256),
            other => Err(CredentialError::UnsupportedCurve(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CredentialError {
    #[error("unsupported curve: {0}")]
    UnsupportedCurve(String),
    #[error("malformed validity window: start must be before end")]
    MalformedValidity,
    #[error("signature does not verify")]
    BadSignature,
    #[error("proof of possession does not verify")]
    BadProofOfPossession,
    #[error("no trust anchor or intermediate matches issuer {0}")]
    UnknownIssuer(String),
    #[error("certificate expired at evaluation time")]
    Expired,
    #[error("certificate not yet valid at evaluation time")]
    NotYetValid,
    #[error("malformed key or point encoding")]
    BadKeyEncoding,
    #[error("wire: {0}")]
    Wire(#[from] WireError),
}

/// Half-open validity window `[start, end)` in UTC seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validity {
    pub start: u64,
    pub end: u64,
}

impl Validity {
    pub fn new(start: u64, end: u64) -> Result<Self, CredentialError> {
        if start >= end {
            return Err(CredentialError::MalformedValidity);
        }
        Ok(Validity { start, end })
    }

    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t < self.end
    }
}

/// An ECDSA P-256 keypair. The private scalar and the SEC1-compressed
/// public point round-trip losslessly through their byte encodings.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate() -> Self {
        let signing = SigningKey::random(&mut OsRng);
        let public = PublicKey::from_verifying(signing.verifying_key());
        KeyPair { signing, public }
    }

    pub fn from_private_bytes(bytes: &[u8]) -> Result<Self, CredentialError> {
        let signing =
            SigningKey::from_slice(bytes).map_err(|_| CredentialError::BadKeyEncoding)?;
        let public = PublicKey::from_verifying(signing.verifying_key());
        Ok(KeyPair { signing, public })
    }

    pub fn private_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes().into()
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    /// Deterministic (RFC 6979) ECDSA signature over SHA-256 of `msg`.
    pub fn sign(&self, msg: &[u8]) -> Sig {
        let sig: Signature = self.signing.sign(msg);
        let mut out = [0u8; SIGNATURE_LEN];
        out.copy_from_slice(&sig.to_bytes());
        Sig(out)
    }
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Never print the private scalar.
        write!(f, "KeyPair(pub={})", hex::encode(self.public.0))
    }
}

/// SEC1-compressed P-256 public key (33 bytes).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    fn from_verifying(vk: &VerifyingKey) -> Self {
        let point = vk.to_encoded_point(true);
        let mut bytes = [0u8; PUBLIC_KEY_LEN];
        bytes.copy_from_slice(point.as_bytes());
        PublicKey(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CredentialError> {
        let arr: [u8; PUBLIC_KEY_LEN] =
            bytes.try_into().map_err(|_| CredentialError::BadKeyEncoding)?;
        // Validate the point is on the curve.
        VerifyingKey::from_sec1_bytes(&arr).map_err(|_| CredentialError::BadKeyEncoding)?;
        Ok(PublicKey(arr))
    }

    pub fn verify(&self, msg: &[u8], sig: &Sig) -> Result<(), CredentialError> {
        let vk = VerifyingKey::from_sec1_bytes(&self.0)
            .map_err(|_| CredentialError::BadKeyEncoding)?;
        let sig =
            Signature::from_slice(&sig.0).map_err(|_| CredentialError::BadSignature)?;
        vk.verify(msg, &sig).map_err(|_| CredentialError::BadSignature)
    }
}

impl std::fmt::Debug for PublicKey {
    fmt_hex_newtype!("PublicKey");
}

/// Fixed-width (r || s) ECDSA signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Sig(pub [u8; SIGNATURE_LEN]);

impl std::fmt::Debug for Sig {
    fmt_hex_newtype!("Sig");
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CertKind {
    Ltc,
    Pseudonym,
    AuthorityCert,
}

impl CertKind {
    fn to_u8(self) -> u8 {
        match self {
            CertKind::Ltc => 1,
            CertKind::Pseudonym => 2,
            CertKind::AuthorityCert => 3,
        }
    }

    fn from_u8(v: u8) -> Result<Self, WireError> {
        match v {
            1 => Ok(CertKind::Ltc),
            2 => Ok(CertKind::Pseudonym),
            3 => Ok(CertKind::AuthorityCert),
            other => Err(WireError::BadEnum { tag: tags::KIND, value: u64::from(other) }),
        }
    }
}

mod tags {
    pub const SERIAL: u8 = 1;
    pub const KIND: u8 = 2;
    pub const SUBJECT_KEY: u8 = 3;
    pub const START: u8 = 4;
    pub const END: u8 = 5;
    pub const ISSUER: u8 = 6;
    pub const SUBJECT_ID: u8 = 7;
    pub const SIGNATURE: u8 = 15;

    pub const CSR_KEY: u8 = 1;
    pub const CSR_POP: u8 = 2;
}

/// Unified certificate for long-term credentials, pseudonyms, and
/// authority certificates.
///
/// `subject_id` names the subject of an authority certificate so chains can
/// be assembled; it is always `None` for pseudonyms and LTCs, which carry no
/// identity content at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub serial: Serial,
    pub kind: CertKind,
    pub subject_public_key: PublicKey,
    pub validity: Validity,
    pub issuer_id: AuthorityId,
    pub subject_id: Option<AuthorityId>,
    pub signature: Sig,
}

/// Certificate fields prior to signing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TbsCertificate {
    pub serial: Serial,
    pub kind: CertKind,
    pub subject_public_key: PublicKey,
    pub validity: Validity,
    pub issuer_id: AuthorityId,
    pub subject_id: Option<AuthorityId>,
}

impl TbsCertificate {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(tags::SERIAL, &self.serial.0)
            .u8(tags::KIND, self.kind.to_u8())
            .bytes(tags::SUBJECT_KEY, &self.subject_public_key.0)
            .u64(tags::START, self.validity.start)
            .u64(tags::END, self.validity.end)
            .string(tags::ISSUER, self.issuer_id.as_str())
            .opt_string(tags::SUBJECT_ID, self.subject_id.as_ref().map(AuthorityId::as_str));
        e.finish()
    }
}

impl Certificate {
    pub fn tbs(&self) -> TbsCertificate {
        TbsCertificate {
            serial: self.serial,
            kind: self.kind,
            subject_public_key: self.subject_public_key,
            validity: self.validity,
            issuer_id: self.issuer_id.clone(),
            subject_id: self.subject_id.clone(),
        }
    }

    pub fn tbs_bytes(&self) -> Vec<u8> {
        self.tbs().to_bytes()
    }

    /// Verifies this certificate's signature under `issuer_key`.
    pub fn verify_signature(&self, issuer_key: &PublicKey) -> Result<(), CredentialError> {
        issuer_key.verify(&self.tbs_bytes(), &self.signature)
    }
}

impl WireEncode for Certificate {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(tags::SERIAL, &self.serial.0)
            .u8(tags::KIND, self.kind.to_u8())
            .bytes(tags::SUBJECT_KEY, &self.subject_public_key.0)
            .u64(tags::START, self.validity.start)
            .u64(tags::END, self.validity.end)
            .string(tags::ISSUER, self.issuer_id.as_str())
            .opt_string(tags::SUBJECT_ID, self.subject_id.as_ref().map(AuthorityId::as_str))
            .bytes(tags::SIGNATURE, &self.signature.0);
        e.finish()
    }
}

impl WireDecode for Certificate {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let serial = Serial(d.array(tags::SERIAL)?);
        let kind = CertKind::from_u8(d.u8(tags::KIND)?)?;
        let key_bytes: [u8; PUBLIC_KEY_LEN] = d.array(tags::SUBJECT_KEY)?;
        let start = d.u64(tags::START)?;
        let end = d.u64(tags::END)?;
        let issuer_id = AuthorityId(d.string(tags::ISSUER)?);
        let subject_id = d.opt_string(tags::SUBJECT_ID)?.map(AuthorityId);
        let signature = Sig(d.array(tags::SIGNATURE)?);
        d.finish()?;
        Ok(Certificate {
            serial,
            kind,
            subject_public_key: PublicKey(key_bytes),
            validity: Validity { start, end },
            issuer_id,
            subject_id,
            signature,
        })
    }
}

/// Signs a to-be-signed certificate under the issuer key.
pub fn sign_certificate(
    issuer_key: &KeyPair,
    tbs: TbsCertificate,
) -> Result<Certificate, CredentialError> {
    if tbs.validity.start >= tbs.validity.end {
        return Err(CredentialError::MalformedValidity);
    }
    let signature = issuer_key.sign(&tbs.to_bytes());
    Ok(Certificate {
        serial: tbs.serial,
        kind: tbs.kind,
        subject_public_key: tbs.subject_public_key,
        validity: tbs.validity,
        issuer_id: tbs.issuer_id,
        subject_id: tbs.subject_id,
        signature,
    })
}

/// Verifies `cert` against the anchor set at time `at`.
///
/// A certificate passes when its signature chains to an anchor, directly or
/// through intermediate authority certificates supplied in `intermediates`,
/// and every certificate along the chain covers `at`. Issuers are matched by
/// `subject_id`.
pub fn verify_chain(
    cert: &Certificate,
    intermediates: &[Certificate],
    trust_anchors: &[Certificate],
    at: u64,
) -> Result<(), CredentialError> {
    const MAX_DEPTH: usize = 8;

    fn find_issuer<'a>(
        issuer_id: &AuthorityId,
        pool: &'a [Certificate],
    ) -> Option<&'a Certificate> {
        pool.iter().find(|c| c.subject_id.as_ref() == Some(issuer_id))
    }

    check_validity(cert, at)?;
    let mut current = cert;
    for _ in 0..MAX_DEPTH {
        // Anchors take precedence: reaching one terminates the chain.
        if let Some(anchor) = find_issuer(&current.issuer_id, trust_anchors) {
            check_validity(anchor, at)?;
            current.verify_signature(&anchor.subject_public_key)?;
            return Ok(());
        }
        let issuer = find_issuer(&current.issuer_id, intermediates)
            .ok_or_else(|| CredentialError::UnknownIssuer(current.issuer_id.0.clone()))?;
        check_validity(issuer, at)?;
        current.verify_signature(&issuer.subject_public_key)?;
        current = issuer;
    }
    Err(CredentialError::UnknownIssuer(current.issuer_id.0.clone()))
}

fn check_validity(cert: &Certificate, at: u64) -> Result<(), CredentialError> {
    if at < cert.validity.start {
        return Err(CredentialError::NotYetValid);
    }
    if at >= cert.validity.end {
        return Err(CredentialError::Expired);
    }
    Ok(())
}

/// Certificate signing request: a public key plus a self-signature proving
/// possession of the matching private key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    pub subject_public_key: PublicKey,
    pub pop_signature: Sig,
}

impl Csr {
    fn pop_bytes(key: &PublicKey) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(tags::CSR_KEY, &key.0);
        e.finish()
    }
}

pub fn make_csr(kp: &KeyPair) -> Csr {
    let public = kp.public();
    let pop_signature = kp.sign(&Csr::pop_bytes(&public));
    Csr { subject_public_key: public, pop_signature }
}

pub fn verify_csr(csr: &Csr) -> Result<(), CredentialError> {
    csr.subject_public_key
        .verify(&Csr::pop_bytes(&csr.subject_public_key), &csr.pop_signature)
        .map_err(|_| CredentialError::BadProofOfPossession)
}

impl WireEncode for Csr {
    fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        e.bytes(tags::CSR_KEY, &self.subject_public_key.0)
            .bytes(tags::CSR_POP, &self.pop_signature.0);
        e.finish()
    }
}

impl WireDecode for Csr {
    fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Dec::new(bytes);
        let key: [u8; PUBLIC_KEY_LEN] = d.array(tags::CSR_KEY)?;
        let pop = Sig(d.array(tags::CSR_POP)?);
        d.finish()?;
        Ok(Csr { subject_public_key: PublicKey(key), pop_signature: pop })
    }
}

/// Convenience constructor for authority certificates.
pub fn authority_tbs(
    subject: &AuthorityId,
    subject_key: PublicKey,
    issuer: &AuthorityId,
    validity: Validity,
) -> TbsCertificate {
    TbsCertificate {
        serial: Serial::random(),
        kind: CertKind::AuthorityCert,
        subject_public_key: subject_key,
        validity,
        issuer_id: issuer.clone(),
        subject_id: Some(subject.clone()),
    }
}
