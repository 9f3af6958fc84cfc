//! Client side of the wire protocol: one connection carries pipelined
//! requests matched to responses by correlation id, with per-call
//! deadlines enforced locally.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};

use super::messages::{ErrorBody, ErrorCode};
use super::tls::ClientTransport;
use super::{read_frame, write_frame, Envelope, MsgType, DEFAULT_FRAME_LIMIT};
use crate::wire::{WireDecode, WireEncode};

#[derive(Debug, thiserror::Error)]
pub enum CallError {
    #[error("deadline exceeded")]
    Timeout,
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    #[error("remote error [{code:?}]: {}", .body.message)]
    Remote { code: ErrorCode, body: ErrorBody },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl CallError {
    fn remote(body: ErrorBody) -> CallError {
        CallError::Remote { code: body.code, body }
    }

    /// The structured error body, when the failure came from the peer.
    pub fn remote_body(&self) -> Option<&ErrorBody> {
        match self {
            CallError::Remote { body, .. } => Some(body),
            _ => None,
        }
    }

    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            CallError::Remote { code, .. } => Some(*code),
            _ => None,
        }
    }
}

struct Pending {
    map: Mutex<Option<HashMap<u64, oneshot::Sender<Envelope>>>>,
}

impl Pending {
    /// Registers a waiter; None if the connection already died.
    fn register(&self, id: u64) -> Option<oneshot::Receiver<Envelope>> {
        let mut guard = self.map.lock().unwrap();
        let map = guard.as_mut()?;
        let (tx, rx) = oneshot::channel();
        map.insert(id, tx);
        Some(rx)
    }

    fn complete(&self, id: u64, env: Envelope) {
        let tx = self.map.lock().unwrap().as_mut().and_then(|m| m.remove(&id));
        if let Some(tx) = tx {
            let _ = tx.send(env);
        }
    }

    fn forget(&self, id: u64) {
        if let Some(map) = self.map.lock().unwrap().as_mut() {
            map.remove(&id);
        }
    }

    /// Drops every waiter; their receivers resolve to ConnectionFailed.
    fn poison(&self) {
        self.map.lock().unwrap().take();
    }
}

struct ConnInner {
    tx: mpsc::UnboundedSender<Envelope>,
    pending: Arc<Pending>,
    next_id: AtomicU64,
    closed: Arc<AtomicBool>,
    peer: String,
}

/// Handle to one service connection. Cloning shares the connection; all
/// clones may issue calls concurrently.
#[derive(Clone)]
pub struct Connection {
    inner: Arc<ConnInner>,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Connection({})", self.inner.peer)
    }
}

impl Connection {
    pub async fn connect(addr: &str, transport: &ClientTransport) -> Result<Connection, CallError> {
        let stream = TcpStream::connect(addr)
            .await
            .map_err(|e| CallError::ConnectionFailed(format!("{addr}: {e}")))?;
        let _ = stream.set_nodelay(true);
        match transport {
            ClientTransport::Plaintext => Ok(Self::start(stream, addr)),
            ClientTransport::Tls { connector, server_name } => {
                let tls = connector
                    .connect(server_name.clone(), stream)
                    .await
                    .map_err(|e| CallError::ConnectionFailed(format!("{addr}: tls: {e}")))?;
                Ok(Self::start(tls, addr))
            }
        }
    }

    fn start<S>(stream: S, peer: &str) -> Connection
    where
        S: AsyncRead + AsyncWrite + Send + 'static,
    {
        let (mut reader, mut writer) = tokio::io::split(stream);
        let (tx, mut rx) = mpsc::unbounded_channel::<Envelope>();
        let pending = Arc::new(Pending { map: Mutex::new(Some(HashMap::new())) });
        let closed = Arc::new(AtomicBool::new(false));

        let w_pending = pending.clone();
        let w_closed = closed.clone();
        tokio::spawn(async move {
            while let Some(env) = rx.recv().await {
                if write_frame(&mut writer, &env).await.is_err() {
                    break;
                }
            }
            w_closed.store(true, Ordering::SeqCst);
            w_pending.poison();
        });

        let r_pending = pending.clone();
        let r_closed = closed.clone();
        tokio::spawn(async move {
            while let Ok(Some(env)) = read_frame(&mut reader, DEFAULT_FRAME_LIMIT).await {
                r_pending.complete(env.correlation_id, env);
            }
            r_closed.store(true, Ordering::SeqCst);
            r_pending.poison();
        });

        Connection {
            inner: Arc::new(ConnInner {
                tx,
                pending,
                next_id: AtomicU64::new(1),
                closed,
                peer: peer.to_string(),
            }),
        }
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::SeqCst)
    }

    pub fn peer(&self) -> &str {
        &self.inner.peer
    }

    /// Sends one request and awaits its response envelope.
    pub async fn call_raw(
        &self,
        msg_type: MsgType,
        body: Vec<u8>,
        deadline: Duration,
    ) -> Result<Envelope, CallError> {
        assert!(!deadline.is_zero(), "deadline must be positive");
        let id = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        let rx = self
            .inner
            .pending
            .register(id)
            .ok_or_else(|| CallError::ConnectionFailed(format!("{}: closed", self.inner.peer)))?;
        if self.inner.tx.send(Envelope::new(msg_type, id, body)).is_err() {
            self.inner.pending.forget(id);
            return Err(CallError::ConnectionFailed(format!("{}: closed", self.inner.peer)));
        }
        match tokio::time::timeout(deadline, rx).await {
            Err(_) => {
                self.inner.pending.forget(id);
                Err(CallError::Timeout)
            }
            Ok(Err(_)) => {
                Err(CallError::ConnectionFailed(format!("{}: closed mid-call", self.inner.peer)))
            }
            Ok(Ok(env)) => Ok(env),
        }
    }

    /// Typed call: encodes the request, expects the paired Ok response
    /// type, and surfaces `Error` responses as `CallError::Remote`.
    pub async fn call<Req, Resp>(
        &self,
        msg_type: MsgType,
        req: &Req,
        deadline: Duration,
    ) -> Result<Resp, CallError>
    where
        Req: WireEncode,
        Resp: WireDecode,
    {
        let env = self.call_raw(msg_type, req.encode(), deadline).await?;
        if env.msg_type == MsgType::Error {
            let body = ErrorBody::decode(&env.body)
                .unwrap_or_else(|_| ErrorBody::new(ErrorCode::Internal, "undecodable error"));
            return Err(CallError::remote(body));
        }
        if env.msg_type != msg_type.ok_response() {
            return Err(CallError::Protocol(format!(
                "expected {:?}, got {:?}",
                msg_type.ok_response(),
                env.msg_type
            )));
        }
        Resp::decode(&env.body).map_err(|e| CallError::Protocol(e.to_string()))
    }
}
