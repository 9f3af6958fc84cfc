//! Generic request/response server. One listener, one task per
//! connection, one spawned task per request, so pipelined requests on a
//! single connection complete out of order; responses are matched to
//! requests by correlation id, never by arrival order.

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};

use super::messages::{ErrorBody, ErrorCode};
use super::tls::ServerTransport;
use super::{read_frame, write_frame, Envelope, MsgType, DEFAULT_FRAME_LIMIT};
use crate::wire::WireEncode;

/// A service behind the wire protocol. Implementations decode the typed
/// body themselves and must tolerate concurrent calls.
#[async_trait::async_trait]
pub trait Handler: Send + Sync + 'static {
    async fn handle(&self, env: Envelope) -> Envelope;
}

/// Builds the universal error response for a request.
pub fn error_response(correlation_id: u64, body: ErrorBody) -> Envelope {
    Envelope::new(MsgType::Error, correlation_id, body.encode())
}

/// Cooperative shutdown signal shared by the accept loop, connection
/// tasks, and whichever component decides to stop the server.
#[derive(Clone)]
pub struct ShutdownSignal {
    tx: Arc<watch::Sender<Option<bool>>>,
}

impl Default for ShutdownSignal {
    fn default() -> Self {
        Self::new()
    }
}

impl ShutdownSignal {
    pub fn new() -> Self {
        let (tx, _) = watch::channel(None);
        ShutdownSignal { tx: Arc::new(tx) }
    }

    /// Requests shutdown. `drain` asks connections to finish in-flight
    /// requests first; a non-drain shutdown abandons them.
    pub fn trigger(&self, drain: bool) {
        // First trigger wins; a drain must not be upgraded mid-way.
        self.tx.send_if_modified(|v| {
            if v.is_none() {
                *v = Some(drain);
                true
            } else {
                false
            }
        });
    }

    pub fn is_triggered(&self) -> bool {
        self.tx.borrow().is_some()
    }

    /// Resolves once shutdown is requested, returning the drain flag.
    pub async fn wait_triggered(&self) -> bool {
        Self::wait(self.subscribe()).await
    }

    fn subscribe(&self) -> watch::Receiver<Option<bool>> {
        self.tx.subscribe()
    }

    async fn wait(mut rx: watch::Receiver<Option<bool>>) -> bool {
        loop {
            if let Some(drain) = *rx.borrow() {
                return drain;
            }
            if rx.changed().await.is_err() {
                return false;
            }
        }
    }
}

/// A running listener bound to a local address.
pub struct Server {
    local_addr: SocketAddr,
    shutdown: ShutdownSignal,
    accept_task: tokio::task::JoinHandle<()>,
}

impl Server {
    pub async fn bind(
        addr: &str,
        transport: ServerTransport,
        handler: Arc<dyn Handler>,
        shutdown: ShutdownSignal,
    ) -> std::io::Result<Server> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let accept_shutdown = shutdown.clone();
        let accept_task = tokio::spawn(accept_loop(
            listener,
            transport,
            handler,
            accept_shutdown,
            DEFAULT_FRAME_LIMIT,
        ));
        Ok(Server { local_addr, shutdown, accept_task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown_signal(&self) -> ShutdownSignal {
        self.shutdown.clone()
    }

    /// Signals shutdown and waits for the accept loop (and, when draining,
    /// all connection tasks) to finish.
    pub async fn stop(self, drain: bool) {
        self.shutdown.trigger(drain);
        let _ = self.accept_task.await;
    }

    /// Waits until the server stops for any reason.
    pub async fn finished(self) {
        let _ = self.accept_task.await;
    }
}

async fn accept_loop(
    listener: TcpListener,
    transport: ServerTransport,
    handler: Arc<dyn Handler>,
    shutdown: ShutdownSignal,
    frame_limit: usize,
) {
    let mut conns = tokio::task::JoinSet::new();
    let shutdown_rx = shutdown.subscribe();
    let drain = loop {
        tokio::select! {
            accepted = listener.accept() => {
                let (stream, _peer) = match accepted {
                    Ok(pair) => pair,
                    Err(_) => continue,
                };
                let _ = stream.set_nodelay(true);
                let transport = transport.clone();
                let handler = handler.clone();
                let conn_shutdown = shutdown.subscribe();
                conns.spawn(async move {
                    match transport {
                        ServerTransport::Plaintext => {
                            serve_conn(stream, handler, conn_shutdown, frame_limit).await;
                        }
                        ServerTransport::Tls(acceptor) => {
                            if let Ok(tls) = acceptor.accept(stream).await {
                                serve_conn(tls, handler, conn_shutdown, frame_limit).await;
                            }
                        }
                    }
                });
            }
            drain = ShutdownSignal::wait(shutdown_rx.clone()) => break drain,
        }
    };
    drop(listener);
    if drain {
        while conns.join_next().await.is_some() {}
    } else {
        conns.abort_all();
    }
}

async fn serve_conn<S>(
    stream: S,
    handler: Arc<dyn Handler>,
    shutdown_rx: watch::Receiver<Option<bool>>,
    frame_limit: usize,
) where
    S: AsyncRead + AsyncWrite + Send + 'static,
{
    let (mut reader, mut writer) = tokio::io::split(stream);
    let (tx, mut rx) = mpsc::unbounded_channel::<Envelope>();

    let writer_task = tokio::spawn(async move {
        while let Some(env) = rx.recv().await {
            if write_frame(&mut writer, &env).await.is_err() {
                break;
            }
        }
    });

    let mut in_flight = tokio::task::JoinSet::new();
    loop {
        tokio::select! {
            frame = read_frame(&mut reader, frame_limit) => {
                match frame {
                    Ok(Some(env)) => {
                        let handler = handler.clone();
                        let tx = tx.clone();
                        in_flight.spawn(async move {
                            let resp = handler.handle(env).await;
                            let _ = tx.send(resp);
                        });
                    }
                    // Clean close, torn frame, or protocol violation: in all
                    // cases stop reading. A violation gets a best-effort
                    // error response first (correlation id unknown, use 0).
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(error_response(
                            0,
                            ErrorBody::new(ErrorCode::InvalidRequest, e.to_string()),
                        ));
                        break;
                    }
                }
            }
            _ = ShutdownSignal::wait(shutdown_rx.clone()) => break,
        }
    }
    // Let in-flight handlers finish and their responses flush; an abrupt
    // (non-drain) stop aborts this whole task from the accept loop instead.
    while in_flight.join_next().await.is_some() {}
    drop(tx);
    let _ = writer_task.await;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::messages::EchoBody;
    use crate::wire::WireDecode;

    struct EchoHandler;

    #[async_trait::async_trait]
    impl Handler for EchoHandler {
        async fn handle(&self, env: Envelope) -> Envelope {
            match env.msg_type {
                MsgType::Echo => {
                    Envelope::new(MsgType::EchoOk, env.correlation_id, env.body)
                }
                _ => error_response(
                    env.correlation_id,
                    ErrorBody::new(ErrorCode::InvalidRequest, "echo only"),
                ),
            }
        }
    }

    #[tokio::test]
    async fn serves_and_stops() {
        let server = Server::bind(
            "127.0.0.1:0",
            ServerTransport::Plaintext,
            Arc::new(EchoHandler),
            ShutdownSignal::new(),
        )
        .await
        .unwrap();
        let addr = server.local_addr();

        let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
        let req = Envelope::new(MsgType::Echo, 99, EchoBody { payload: vec![5, 6] }.encode());
        write_frame(&mut stream, &req).await.unwrap();
        let resp = read_frame(&mut stream, DEFAULT_FRAME_LIMIT).await.unwrap().unwrap();
        assert_eq!(resp.msg_type, MsgType::EchoOk);
        assert_eq!(resp.correlation_id, 99);
        assert_eq!(EchoBody::decode(&resp.body).unwrap().payload, vec![5, 6]);

        server.stop(true).await;
        // Listener is gone after stop.
        assert!(tokio::net::TcpStream::connect(addr).await.is_err());
    }
}
