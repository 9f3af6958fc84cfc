//! The pod wrapper: turns a bare service handler into an orchestratable
//! replica with bounded concurrency, busy-time accounting, fault injection,
//! and a control plane (stats, fault, shutdown) that keeps working while
//! the service path is faulted.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::sync::Semaphore;

use crate::gateway::messages::{
    ErrorBody, ErrorCode, Fault, InjectFaultBody, InjectFaultOkBody, PodStatsBody, ShutdownBody,
    ShutdownOkBody,
};
use crate::gateway::server::{error_response, Handler, ShutdownSignal};
use crate::gateway::{Envelope, MsgType};
use crate::wire::{WireDecode, WireEncode};

#[derive(Debug, Clone)]
pub struct PodConfig {
    /// Requests processed concurrently; beyond this they queue.
    pub concurrency_slots: u32,
    /// Extra per-request processing time, to make saturation reachable at
    /// desk-scale request rates. Applied inside a slot, so it counts as
    /// busy time exactly like real work.
    pub synthetic_work_ms: u64,
}

impl Default for PodConfig {
    fn default() -> Self {
        PodConfig { concurrency_slots: 4, synthetic_work_ms: 0 }
    }
}

/// Wraps a service handler as a replica. Service requests pass through the
/// fault gate and a concurrency slot, and their wall time accrues to
/// `busy_nanos`. Health checks pass the fault gate only: a faulted pod must
/// look dead to its prober, but a merely saturated one must not, or overload
/// would read as mass death and the controller would replace its busiest
/// pods. Control messages (`PodStats`, `InjectFault`, `Shutdown`) bypass
/// everything: the management channel of a sick pod must stay reachable, or
/// nothing could observe or replace it.
pub struct PodHandler {
    inner: Arc<dyn Handler>,
    cfg: PodConfig,
    slots: Arc<Semaphore>,
    busy_nanos: AtomicU64,
    requests_handled: AtomicU64,
    started: Instant,
    fault: Mutex<Fault>,
    shutdown: ShutdownSignal,
}

impl PodHandler {
    pub fn new(inner: Arc<dyn Handler>, cfg: PodConfig, shutdown: ShutdownSignal) -> Arc<PodHandler> {
        assert!(cfg.concurrency_slots >= 1, "a pod needs at least one slot");
        Arc::new(PodHandler {
            inner,
            slots: Arc::new(Semaphore::new(cfg.concurrency_slots as usize)),
            cfg,
            busy_nanos: AtomicU64::new(0),
            requests_handled: AtomicU64::new(0),
            started: Instant::now(),
            fault: Mutex::new(Fault::None),
            shutdown,
        })
    }

    pub fn stats(&self) -> PodStatsBody {
        PodStatsBody {
            busy_nanos: self.busy_nanos.load(Ordering::Relaxed),
            uptime_nanos: self.started.elapsed().as_nanos() as u64,
            concurrency_slots: self.cfg.concurrency_slots,
            requests_handled: self.requests_handled.load(Ordering::Relaxed),
            draining: self.shutdown.is_triggered(),
        }
    }

    fn current_fault(&self) -> Fault {
        *self.fault.lock().unwrap()
    }

    fn set_fault(&self, fault: Fault) {
        *self.fault.lock().unwrap() = fault;
    }

    async fn serve(&self, env: Envelope) -> Envelope {
        match self.current_fault() {
            Fault::None => {}
            Fault::DropAll => {
                // Swallow the request: the caller's deadline expires. Wakes
                // on shutdown so a drain never wedges on dropped requests.
                self.shutdown.wait_triggered().await;
                return error_response(
                    env.correlation_id,
                    ErrorBody::new(ErrorCode::Draining, "pod stopping"),
                );
            }
            Fault::DelayMs(ms) => tokio::time::sleep(Duration::from_millis(ms)).await,
            Fault::Crash => {
                // Already crashed; the listener is going down. Anything
                // still in the pipe gets nothing.
                self.shutdown.wait_triggered().await;
                return error_response(
                    env.correlation_id,
                    ErrorBody::new(ErrorCode::Draining, "pod stopping"),
                );
            }
        }
        if env.msg_type == MsgType::HealthCheck {
            // Liveness, not readiness: answer without queueing for a slot,
            // and keep probes out of the load accounting.
            return self.inner.handle(env).await;
        }
        let _permit = self.slots.acquire().await.expect("slot semaphore never closes");
        let begin = Instant::now();
        if self.cfg.synthetic_work_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.cfg.synthetic_work_ms)).await;
        }
        let resp = self.inner.handle(env).await;
        self.busy_nanos.fetch_add(begin.elapsed().as_nanos() as u64, Ordering::Relaxed);
        self.requests_handled.fetch_add(1, Ordering::Relaxed);
        resp
    }
}

#[async_trait::async_trait]
impl Handler for PodHandler {
    async fn handle(&self, env: Envelope) -> Envelope {
        let id = env.correlation_id;
        match env.msg_type {
            MsgType::PodStats => Envelope::new(MsgType::PodStatsOk, id, self.stats().encode()),
            MsgType::InjectFault => match InjectFaultBody::decode(&env.body) {
                Ok(body) => {
                    self.set_fault(body.fault);
                    if matches!(body.fault, Fault::Crash) {
                        // Abrupt stop: no drain, in-flight responses are
                        // lost, exactly like a dying process.
                        self.shutdown.trigger(false);
                    }
                    Envelope::new(MsgType::InjectFaultOk, id, InjectFaultOkBody.encode())
                }
                Err(e) => error_response(id, ErrorBody::new(ErrorCode::InvalidRequest, e.to_string())),
            },
            MsgType::Shutdown => match ShutdownBody::decode(&env.body) {
                Ok(body) => {
                    self.shutdown.trigger(body.drain);
                    Envelope::new(MsgType::ShutdownOk, id, ShutdownOkBody.encode())
                }
                Err(e) => error_response(id, ErrorBody::new(ErrorCode::InvalidRequest, e.to_string())),
            },
            _ => self.serve(env).await,
        }
    }
}
