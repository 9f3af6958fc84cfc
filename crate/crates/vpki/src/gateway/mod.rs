//! Wire protocol shared by every service and client: envelope schema,
//! length-prefixed framing, typed message bodies, and the TCP/TLS
//! transport. Byte layout is documented in `docs/wire-format.md` with
//! committed golden vectors.

pub mod client;
pub mod messages;
pub mod server;
pub mod tls;

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

pub const PROTOCOL_VERSION: u16 = 1;
/// Default cap on one frame. A standard 100-CSR batch encodes well under
/// this; anything larger is a protocol violation, not a bigger workload.
pub const DEFAULT_FRAME_LIMIT: usize = 1 << 20;

const HEADER_LEN: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("unknown protocol version {0}")]
    UnknownVersion(u16),
    #[error("unknown message type {0:#06x}")]
    UnknownType(u16),
    #[error("truncated frame")]
    TruncatedFrame,
    #[error("frame of {got} bytes exceeds limit {limit}")]
    OversizeFrame { got: usize, limit: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! msg_types {
    ($($name:ident = $value:expr,)*) => {
        /// Every request and response on the wire. Responses carry the
        /// request's value with the high bit set; `Error` is the single
        /// failure response for all requests.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        #[repr(u16)]
        pub enum MsgType {
            $($name = $value,)*
        }

        impl MsgType {
            pub fn from_u16(v: u16) -> Option<MsgType> {
                match v {
                    $($value => Some(MsgType::$name),)*
                    _ => None,
                }
            }

            pub const ALL: &'static [MsgType] = &[$(MsgType::$name,)*];
        }
    };
}

msg_types! {
    Echo = 0x0001,
    HealthCheck = 0x0002,
    GetServiceInfo = 0x0003,
    PodStats = 0x0004,
    InjectFault = 0x0005,
    Shutdown = 0x0006,
    RegisterVehicle = 0x0010,
    IssueTicket = 0x0011,
    ResolveTicket = 0x0012,
    ListTickets = 0x0013,
    RevokeLtc = 0x0014,
    IssuePseudonyms = 0x0020,
    LookupTicket = 0x0021,
    RevokeByTicket = 0x0022,
    GetCrl = 0x0023,
    Resolve = 0x0030,
    RevokeVehicle = 0x0031,
    EchoOk = 0x8001,
    HealthCheckOk = 0x8002,
    GetServiceInfoOk = 0x8003,
    PodStatsOk = 0x8004,
    InjectFaultOk = 0x8005,
    ShutdownOk = 0x8006,
    RegisterVehicleOk = 0x8010,
    IssueTicketOk = 0x8011,
    ResolveTicketOk = 0x8012,
    ListTicketsOk = 0x8013,
    RevokeLtcOk = 0x8014,
    IssuePseudonymsOk = 0x8020,
    LookupTicketOk = 0x8021,
    RevokeByTicketOk = 0x8022,
    GetCrlOk = 0x8023,
    ResolveOk = 0x8030,
    RevokeVehicleOk = 0x8031,
    Error = 0xFFFF,
}

impl MsgType {
    /// The success-response type paired with a request type.
    pub fn ok_response(self) -> MsgType {
        MsgType::from_u16(self as u16 | 0x8000).expect("every request has an Ok response")
    }

    pub fn is_request(self) -> bool {
        (self as u16) & 0x8000 == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u16,
    pub msg_type: MsgType,
    pub correlation_id: u64,
    pub body: Vec<u8>,
}

impl Envelope {
    pub fn new(msg_type: MsgType, correlation_id: u64, body: Vec<u8>) -> Envelope {
        Envelope { version: PROTOCOL_VERSION, msg_type, correlation_id, body }
    }

    /// Header plus body, without the outer length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&(self.msg_type as u16).to_be_bytes());
        out.extend_from_slice(&self.correlation_id.to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    /// Validates version and message type before touching the body.
    pub fn decode(bytes: &[u8]) -> Result<Envelope, FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::TruncatedFrame);
        }
        let version = u16::from_be_bytes(bytes[0..2].try_into().unwrap());
        if version != PROTOCOL_VERSION {
            return Err(FrameError::UnknownVersion(version));
        }
        let raw_type = u16::from_be_bytes(bytes[2..4].try_into().unwrap());
        let msg_type = MsgType::from_u16(raw_type).ok_or(FrameError::UnknownType(raw_type))?;
        let correlation_id = u64::from_be_bytes(bytes[4..12].try_into().unwrap());
        Ok(Envelope { version, msg_type, correlation_id, body: bytes[HEADER_LEN..].to_vec() })
    }
}

pub fn encode_frame(env: &Envelope) -> Vec<u8> {
    let payload = env.encode();
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly at a frame
/// boundary; closing mid-frame is a `TruncatedFrame`.
pub async fn read_frame<R: AsyncRead + Unpin>(
    reader: &mut R,
    limit: usize,
) -> Result<Option<Envelope>, FrameError> {
    let mut len_buf = [0u8; 4];
    match reader.read_exact(&mut len_buf).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(FrameError::Io(e)),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > limit {
        return Err(FrameError::OversizeFrame { got: len, limit });
    }
    let mut payload = vec![0u8; len];
    match reader.read_exact(&mut payload).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            return Err(FrameError::TruncatedFrame)
        }
        Err(e) => return Err(FrameError::Io(e)),
    }
    Envelope::decode(&payload).map(Some)
}

pub async fn write_frame<W: AsyncWrite + Unpin>(
    writer: &mut W,
    env: &Envelope,
) -> Result<(), std::io::Error> {
    writer.write_all(&encode_frame(env)).await?;
    writer.flush().await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_roundtrip_byte_exact() {
        let env = Envelope::new(MsgType::Echo, 42, b"payload".to_vec());
        let bytes = env.encode();
        let back = Envelope::decode(&bytes).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn unknown_version_rejected_before_body() {
        let mut bytes = Envelope::new(MsgType::Echo, 1, vec![0xFF; 8]).encode();
        bytes[0] = 0x7F;
        assert!(matches!(Envelope::decode(&bytes), Err(FrameError::UnknownVersion(_))));
    }

    #[test]
    fn unknown_type_rejected_before_body() {
        let mut bytes = Envelope::new(MsgType::Echo, 1, vec![0xFF; 8]).encode();
        bytes[2] = 0x7E;
        bytes[3] = 0xEE;
        assert!(matches!(Envelope::decode(&bytes), Err(FrameError::UnknownType(0x7EEE))));
    }

    #[test]
    fn short_header_truncated() {
        assert!(matches!(Envelope::decode(&[0, 1, 0]), Err(FrameError::TruncatedFrame)));
    }

    #[test]
    fn every_request_has_response_type() {
        for t in MsgType::ALL {
            if t.is_request() && *t != MsgType::Error {
                let ok = t.ok_response();
                assert_eq!(ok as u16, *t as u16 | 0x8000);
            }
        }
    }

    #[tokio::test]
    async fn frame_roundtrip_over_stream() {
        let env = Envelope::new(MsgType::GetCrl, 7, vec![1, 2, 3]);
        let bytes = encode_frame(&env);
        let mut cursor = std::io::Cursor::new(bytes);
        let back = read_frame(&mut cursor, DEFAULT_FRAME_LIMIT).await.unwrap().unwrap();
        assert_eq!(back, env);
        // Next read: clean EOF at the frame boundary.
        assert!(read_frame(&mut cursor, DEFAULT_FRAME_LIMIT).await.unwrap().is_none());
    }

    #[tokio::test]
    async fn truncated_mid_body_detected() {
        let env = Envelope::new(MsgType::Echo, 7, vec![9; 100]);
        let mut bytes = encode_frame(&env);
        bytes.truncate(bytes.len() - 40);
        let mut cursor = std::io::Cursor::new(bytes);
        assert!(matches!(
            read_frame(&mut cursor, DEFAULT_FRAME_LIMIT).await,
            Err(FrameError::TruncatedFrame)
        ));
    }

    #[tokio::test]
    async fn oversize_frame_rejected_without_reading_body() {
        let env = Envelope::new(MsgType::Echo, 7, vec![0; 2048]);
        let bytes = encode_frame(&env);
        let mut cursor = std::io::Cursor::new(bytes);
        assert!(matches!(
            read_frame(&mut cursor, 1024).await,
            Err(FrameError::OversizeFrame { got: 2060, limit: 1024 })
        ));
    }
}
