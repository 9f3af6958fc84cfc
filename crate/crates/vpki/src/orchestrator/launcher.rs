//! How replicas come to life: in-process workers (a server task in this
//! process) or subprocesses that announce their listen address on stdout.
//! Both yield the same `PodHandle`, so the manager never cares which.

use std::path::PathBuf;
use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::process::{Child, Command};

use super::pod::{PodConfig, PodHandler};
use crate::gateway::server::{Handler, Server, ShutdownSignal};
use crate::gateway::tls::ServerTransport;

#[derive(Debug, thiserror::Error)]
pub enum SpawnError {
    #[error("spawn failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("pod exited before announcing a listen address")]
    NoAnnounce,
    #[error("pod did not announce a listen address in time")]
    AnnounceTimeout,
}

/// A launched replica: where it listens, and the means to stop it.
pub struct PodHandle {
    pub addr: String,
    kind: HandleKind,
}

enum HandleKind {
    InProcess { server: Server },
    Child(Box<Child>),
}

impl PodHandle {
    /// Stops the pod. Drain lets in-flight requests finish. For child
    /// processes the manager sends the wire-level shutdown first; this
    /// waits briefly for a clean exit, then kills.
    pub async fn stop(self, drain: bool) {
        match self.kind {
            HandleKind::InProcess { server } => server.stop(drain).await,
            HandleKind::Child(mut child) => {
                if drain
                    && tokio::time::timeout(Duration::from_secs(5), child.wait()).await.is_ok()
                {
                    return;
                }
                let _ = child.start_kill();
                let _ = child.wait().await;
            }
        }
    }
}

#[async_trait::async_trait]
pub trait PodLauncher: Send + Sync + 'static {
    async fn spawn(&self, pod_id: &str) -> Result<PodHandle, SpawnError>;
}

/// Builds the service handler for each new pod (sharing stores, keys,
/// clocks as it sees fit).
pub type HandlerFactory = dyn Fn(&str) -> Arc<dyn Handler> + Send + Sync;

/// Spawns pods as server tasks in this process; the launcher wraps each
/// factory-built handler as a `PodHandler`.
pub struct InProcessLauncher {
    factory: Arc<HandlerFactory>,
    pod_cfg: PodConfig,
    transport: ServerTransport,
}

impl InProcessLauncher {
    pub fn new<F>(pod_cfg: PodConfig, factory: F) -> InProcessLauncher
    where
        F: Fn(&str) -> Arc<dyn Handler> + Send + Sync + 'static,
    {
        InProcessLauncher { factory: Arc::new(factory), pod_cfg, transport: ServerTransport::Plaintext }
    }

    pub fn with_transport(mut self, transport: ServerTransport) -> Self {
        self.transport = transport;
        self
    }
}

#[async_trait::async_trait]
impl PodLauncher for InProcessLauncher {
    async fn spawn(&self, pod_id: &str) -> Result<PodHandle, SpawnError> {
        let shutdown = ShutdownSignal::new();
        let inner = (self.factory)(pod_id);
        let pod = PodHandler::new(inner, self.pod_cfg.clone(), shutdown.clone());
        let server = Server::bind("127.0.0.1:0", self.transport.clone(), pod, shutdown).await?;
        Ok(PodHandle {
            addr: server.local_addr().to_string(),
            kind: HandleKind::InProcess { server },
        })
    }
}

/// Spawns pods as child processes. The program must print a line
/// `LISTENING <addr>` on stdout once it accepts connections; `{pod_id}` in
/// any argument is substituted with the pod's id.
pub struct SubprocessLauncher {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub announce_timeout: Duration,
}

impl SubprocessLauncher {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> SubprocessLauncher {
        SubprocessLauncher { program: program.into(), args, announce_timeout: Duration::from_secs(10) }
    }
}

#[async_trait::async_trait]
impl PodLauncher for SubprocessLauncher {
    async fn spawn(&self, pod_id: &str) -> Result<PodHandle, SpawnError> {
        let args: Vec<String> = self.args.iter().map(|a| a.replace("{pod_id}", pod_id)).collect();
        let mut child = Command::new(&self.program)
            .args(&args)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .kill_on_drop(true)
            .spawn()?;
        let stdout = child.stdout.take().expect("stdout was piped");
        let mut lines = BufReader::new(stdout).lines();
        let announced = tokio::time::timeout(self.announce_timeout, async {
            while let Ok(Some(line)) = lines.next_line().await {
                if let Some(addr) = line.strip_prefix("LISTENING ") {
                    return Some(addr.trim().to_string());
                }
            }
            None
        })
        .await
        .map_err(|_| SpawnError::AnnounceTimeout)?;
        let addr = match announced {
            Some(addr) => addr,
            None => {
                let _ = child.start_kill();
                return Err(SpawnError::NoAnnounce);
            }
        };
        // Keep draining stdout so the child never blocks on a full pipe.
        tokio::spawn(async move { while let Ok(Some(_)) = lines.next_line().await {} });
        Ok(PodHandle { addr, kind: HandleKind::Child(Box::new(child)) })
    }
}
