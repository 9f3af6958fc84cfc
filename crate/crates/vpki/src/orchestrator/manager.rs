//! The deployment manager: owns one service's pod fleet, runs the
//! probe/sample/decide/apply loop, routes requests round-robin over Ready
//! pods, and appends every scaling action to an observable event log.

use std::io::Write;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use super::controller::{
    controller_step, ControllerState, DeploymentConfig, MetricsSnapshot, PodState, PodStatus,
    ScalingAction,
};
use super::launcher::{PodHandle, PodLauncher};
use crate::gateway::client::Connection;
use crate::gateway::messages::{
    ErrorBody, ErrorCode, Fault, HealthCheckOkBody, HealthCheckReq, InjectFaultBody,
    InjectFaultOkBody, PodStatsBody, PodStatsReq, ShutdownBody, ShutdownOkBody,
};
use crate::gateway::server::{error_response, Handler, ShutdownSignal};
use crate::gateway::tls::ClientTransport;
use crate::gateway::{Envelope, MsgType};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid deployment config: {0}")]
    Config(String),
    #[error("no ready pods")]
    NoReadyPods,
    #[error("pod {0} unreachable")]
    Unreachable(String),
    #[error(transparent)]
    Spawn(#[from] super::launcher::SpawnError),
}

/// One line of the scaling log (also emitted as newline-delimited JSON
/// when an event sink is attached).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingEvent {
    pub timestamp_ms: u64,
    pub service: String,
    pub action: String,
    pub pod_id: String,
    /// Live replicas right after the action.
    pub replica_count: usize,
}

struct ManagedPod {
    state: PodState,
    addr: String,
    handle: Option<PodHandle>,
    conn: Option<Connection>,
    /// (busy_nanos, uptime_nanos) from the previous stats sample.
    prev_sample: Option<(u64, u64)>,
}

#[derive(Default)]
struct Fleet {
    /// Live pods only; killed pods move to `retired`.
    pods: Vec<ManagedPod>,
    retired: Vec<PodState>,
    last_scale_ms: Option<u64>,
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).expect("clock before epoch").as_millis() as u64
}

pub struct Deployment {
    cfg: DeploymentConfig,
    launcher: Box<dyn PodLauncher>,
    client_transport: ClientTransport,
    fleet: Mutex<Fleet>,
    /// Serializes ticks so concurrent callers cannot interleave decisions.
    tick_gate: Mutex<()>,
    next_pod: AtomicU64,
    rr: AtomicUsize,
    events: std::sync::Mutex<Vec<ScalingEvent>>,
    event_sink: Option<std::sync::Mutex<Box<dyn Write + Send>>>,
}

impl Deployment {
    /// Validates the config and brings up `min_replicas` pods (Starting;
    /// they become Ready on their first passed probe).
    pub async fn new(
        cfg: DeploymentConfig,
        launcher: Box<dyn PodLauncher>,
        client_transport: ClientTransport,
        event_sink: Option<Box<dyn Write + Send>>,
    ) -> Result<Arc<Deployment>, OrchestratorError> {
        cfg.validate().map_err(OrchestratorError::Config)?;
        let d = Arc::new(Deployment {
            cfg,
            launcher,
            client_transport,
            fleet: Mutex::new(Fleet::default()),
            tick_gate: Mutex::new(()),
            next_pod: AtomicU64::new(0),
            rr: AtomicUsize::new(0),
            events: std::sync::Mutex::new(Vec::new()),
            event_sink: event_sink.map(std::sync::Mutex::new),
        });
        for _ in 0..d.cfg.min_replicas {
            d.spawn_pod().await?;
        }
        Ok(d)
    }

    pub fn config(&self) -> &DeploymentConfig {
        &self.cfg
    }

    fn log_event(&self, action: &str, pod_id: &str, replica_count: usize) {
        let event = ScalingEvent {
            timestamp_ms: unix_ms(),
            service: self.cfg.service_kind.to_string(),
            action: action.to_string(),
            pod_id: pod_id.to_string(),
            replica_count,
        };
        if let Some(sink) = &self.event_sink {
            let mut sink = sink.lock().unwrap();
            if let Ok(line) = serde_json::to_string(&event) {
                let _ = writeln!(sink, "{line}");
                let _ = sink.flush();
            }
        }
        self.events.lock().unwrap().push(event);
    }

    /// Every scaling event so far, oldest first.
    pub fn events(&self) -> Vec<ScalingEvent> {
        self.events.lock().unwrap().clone()
    }

    pub async fn live_pods(&self) -> Vec<PodState> {
        self.fleet.lock().await.pods.iter().map(|p| p.state.clone()).collect()
    }

    pub async fn retired_pods(&self) -> Vec<PodState> {
        self.fleet.lock().await.retired.clone()
    }

    pub async fn replica_count(&self) -> usize {
        self.fleet.lock().await.pods.len()
    }

    fn probe_deadline(&self) -> Duration {
        Duration::from_millis((self.cfg.probe_interval_s * 500).clamp(100, 2_000))
    }

    async fn spawn_pod(&self) -> Result<String, OrchestratorError> {
        let pod_id = format!(
            "{}-pod-{}",
            self.cfg.service_kind,
            self.next_pod.fetch_add(1, Ordering::Relaxed)
        );
        let handle = self.launcher.spawn(&pod_id).await?;
        let mut fleet = self.fleet.lock().await;
        fleet.pods.push(ManagedPod {
            state: PodState {
                pod_id: pod_id.clone(),
                service_kind: self.cfg.service_kind,
                status: PodStatus::Starting,
                last_load: 0.0,
                consecutive_probe_failures: 0,
            },
            addr: handle.addr.clone(),
            handle: Some(handle),
            conn: None,
            prev_sample: None,
        });
        Ok(pod_id)
    }

    /// Marks the pod Terminated, removes it from routing, and stops it in
    /// the background (drained or abrupt).
    async fn kill_pod(&self, pod_id: &str, drain: bool) {
        let mut fleet = self.fleet.lock().await;
        let Some(pos) = fleet.pods.iter().position(|p| p.state.pod_id == pod_id) else {
            return;
        };
        let mut pod = fleet.pods.remove(pos);
        pod.state.status = PodStatus::Terminated;
        fleet.retired.push(pod.state.clone());
        drop(fleet);

        let conn = pod.conn.take();
        let handle = pod.handle.take();
        tokio::spawn(async move {
            if drain {
                if let Some(conn) = &conn {
                    let _ = conn
                        .call::<_, ShutdownOkBody>(
                            MsgType::Shutdown,
                            &ShutdownBody { drain: true },
                            Duration::from_secs(2),
                        )
                        .await;
                }
            }
            if let Some(handle) = handle {
                handle.stop(drain).await;
            }
        });
    }

    /// One probe/sample/decide/apply round. Returns the actions applied.
    pub async fn tick(&self) -> Vec<ScalingAction> {
        let _gate = self.tick_gate.lock().await;
        let deadline = self.probe_deadline();

        // Snapshot the live pods and make sure each has a connection,
        // without holding the fleet lock across the probes themselves.
        let targets: Vec<(String, String, Option<Connection>)> = {
            let fleet = self.fleet.lock().await;
            fleet
                .pods
                .iter()
                .map(|p| {
                    (
                        p.state.pod_id.clone(),
                        p.addr.clone(),
                        p.conn.as_ref().filter(|c| !c.is_closed()).cloned(),
                    )
                })
                .collect()
        };

        let mut probes = tokio::task::JoinSet::new();
        for (pod_id, addr, conn) in targets {
            let transport = self.client_transport.clone();
            probes.spawn(async move {
                let conn = match conn {
                    Some(c) => c,
                    None => match Connection::connect(&addr, &transport).await {
                        Ok(c) => c,
                        Err(_) => return (pod_id, None, false, None),
                    },
                };
                let health = conn
                    .call::<_, HealthCheckOkBody>(MsgType::HealthCheck, &HealthCheckReq, deadline)
                    .await
                    .is_ok();
                let stats = conn
                    .call::<_, PodStatsBody>(MsgType::PodStats, &PodStatsReq, deadline)
                    .await
                    .ok();
                (pod_id, Some(conn), health, stats)
            });
        }
        let mut results = Vec::new();
        while let Some(joined) = probes.join_next().await {
            if let Ok(r) = joined {
                results.push(r);
            }
        }

        let now_ms = unix_ms();
        let (snapshot, ctrl_state) = {
            let mut fleet = self.fleet.lock().await;
            let mut loads = Vec::new();
            let mut health = Vec::new();
            for (pod_id, conn, healthy, stats) in results {
                let Some(pod) = fleet.pods.iter_mut().find(|p| p.state.pod_id == pod_id) else {
                    continue;
                };
                if let Some(conn) = conn {
                    pod.conn = Some(conn);
                }
                health.push((pod_id.clone(), healthy));
                if healthy {
                    pod.state.consecutive_probe_failures = 0;
                    pod.state.status = PodStatus::Ready;
                } else {
                    pod.state.consecutive_probe_failures += 1;
                    if pod.state.status == PodStatus::Ready {
                        pod.state.status = PodStatus::Unhealthy;
                    }
                }
                if let Some(s) = stats {
                    let frac = match pod.prev_sample {
                        Some((busy0, up0)) if s.uptime_nanos > up0 => {
                            (s.busy_nanos.saturating_sub(busy0)) as f64
                                / ((s.uptime_nanos - up0) as f64
                                    * f64::from(s.concurrency_slots.max(1)))
                        }
                        _ if s.uptime_nanos > 0 => {
                            s.busy_nanos as f64
                                / (s.uptime_nanos as f64 * f64::from(s.concurrency_slots.max(1)))
                        }
                        _ => 0.0,
                    };
                    pod.prev_sample = Some((s.busy_nanos, s.uptime_nanos));
                    pod.state.last_load = frac.clamp(0.0, 1.0);
                    loads.push((pod_id, pod.state.last_load));
                }
            }
            let snapshot = MetricsSnapshot { timestamp_ms: now_ms, loads, health };
            let ctrl_state = ControllerState {
                pods: fleet.pods.iter().map(|p| p.state.clone()).collect(),
                last_scale_ms: fleet.last_scale_ms,
            };
            (snapshot, ctrl_state)
        };

        let actions = controller_step(&self.cfg, &snapshot, &ctrl_state, now_ms);
        for action in &actions {
            match action {
                ScalingAction::SpawnPod(_) => {
                    if let Ok(pod_id) = self.spawn_pod().await {
                        let count = self.replica_count().await;
                        self.log_event("spawn", &pod_id, count);
                        self.fleet.lock().await.last_scale_ms = Some(now_ms);
                    }
                }
                ScalingAction::KillPod(pod_id) => {
                    self.kill_pod(pod_id, true).await;
                    let count = self.replica_count().await;
                    self.log_event("kill", pod_id, count);
                    self.fleet.lock().await.last_scale_ms = Some(now_ms);
                }
                ScalingAction::ReplacePod(pod_id) => {
                    // Heal, not scale: no drain for the sick pod, and the
                    // cooldown is left alone.
                    self.kill_pod(pod_id, false).await;
                    let _ = self.spawn_pod().await;
                    let count = self.replica_count().await;
                    self.log_event("replace", pod_id, count);
                }
            }
        }
        actions
    }

    /// Ticks every `probe_interval_s` until `stop` is triggered.
    pub async fn run(self: Arc<Self>, stop: ShutdownSignal) {
        let interval = Duration::from_secs(self.cfg.probe_interval_s);
        loop {
            tokio::select! {
                _ = tokio::time::sleep(interval) => { self.tick().await; }
                _ = stop.wait_triggered() => return,
            }
        }
    }

    /// Round-robin over Ready pods; returns the chosen pod and a live
    /// connection to it.
    pub async fn route(&self) -> Result<(String, Connection), OrchestratorError> {
        let mut fleet = self.fleet.lock().await;
        let ready: Vec<usize> = fleet
            .pods
            .iter()
            .enumerate()
            .filter(|(_, p)| p.state.status == PodStatus::Ready)
            .map(|(i, _)| i)
            .collect();
        if ready.is_empty() {
            return Err(OrchestratorError::NoReadyPods);
        }
        let idx = ready[self.rr.fetch_add(1, Ordering::Relaxed) % ready.len()];
        let pod = &mut fleet.pods[idx];
        if pod.conn.as_ref().is_none_or(|c| c.is_closed()) {
            let conn = Connection::connect(&pod.addr, &self.client_transport)
                .await
                .map_err(|_| OrchestratorError::Unreachable(pod.state.pod_id.clone()))?;
            pod.conn = Some(conn);
        }
        Ok((pod.state.pod_id.clone(), pod.conn.clone().expect("just set")))
    }

    /// Sends a fault to a pod's control plane. Crash faults tolerate a
    /// lost acknowledgement, because that is what crashing means.
    pub async fn inject_fault(&self, pod_id: &str, fault: Fault) -> Result<(), OrchestratorError> {
        let (addr, conn) = {
            let fleet = self.fleet.lock().await;
            let pod = fleet
                .pods
                .iter()
                .find(|p| p.state.pod_id == pod_id)
                .ok_or_else(|| OrchestratorError::Unreachable(pod_id.to_string()))?;
            (pod.addr.clone(), pod.conn.as_ref().filter(|c| !c.is_closed()).cloned())
        };
        let conn = match conn {
            Some(c) => c,
            None => Connection::connect(&addr, &self.client_transport)
                .await
                .map_err(|_| OrchestratorError::Unreachable(pod_id.to_string()))?,
        };
        let result = conn
            .call::<_, InjectFaultOkBody>(
                MsgType::InjectFault,
                &InjectFaultBody { fault },
                Duration::from_secs(1),
            )
            .await;
        match (result, fault) {
            (Ok(_), _) | (Err(_), Fault::Crash) => Ok(()),
            (Err(e), _) => Err(OrchestratorError::Unreachable(format!("{pod_id}: {e}"))),
        }
    }

    /// Drains and stops every live pod.
    pub async fn stop_all(&self) {
        let ids: Vec<String> =
            self.fleet.lock().await.pods.iter().map(|p| p.state.pod_id.clone()).collect();
        for id in ids {
            self.kill_pod(&id, true).await;
        }
    }
}

/// A front door for a deployment: forwards every request to a routed pod
/// and relays the response under the caller's correlation id, so clients
/// see a single address while replicas come and go.
pub struct ProxyHandler {
    deployment: Arc<Deployment>,
    forward_deadline: Duration,
}

impl ProxyHandler {
    pub fn new(deployment: Arc<Deployment>, forward_deadline: Duration) -> Arc<ProxyHandler> {
        Arc::new(ProxyHandler { deployment, forward_deadline })
    }
}

#[async_trait::async_trait]
impl Handler for ProxyHandler {
    async fn handle(&self, env: Envelope) -> Envelope {
        let id = env.correlation_id;
        let (pod_id, conn) = match self.deployment.route().await {
            Ok(t) => t,
            Err(e) => {
                return error_response(
                    id,
                    ErrorBody::new(ErrorCode::UpstreamUnavailable, e.to_string()),
                )
            }
        };
        match conn.call_raw(env.msg_type, env.body, self.forward_deadline).await {
            Ok(mut resp) => {
                resp.correlation_id = id;
                resp
            }
            Err(e) => error_response(
                id,
                ErrorBody::new(ErrorCode::UpstreamUnavailable, format!("pod {pod_id}: {e}")),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::messages::EchoBody;
    use crate::gateway::server::Server;
    use crate::gateway::tls::ServerTransport;
    use crate::orchestrator::{InProcessLauncher, PodConfig, ServiceKind};
    use crate::wire::WireEncode;
    use std::collections::HashMap;

    struct Echo;

    #[async_trait::async_trait]
    impl Handler for Echo {
        async fn handle(&self, env: Envelope) -> Envelope {
            match env.msg_type {
                MsgType::Echo => Envelope::new(MsgType::EchoOk, env.correlation_id, env.body),
                MsgType::HealthCheck => Envelope::new(
                    MsgType::HealthCheckOk,
                    env.correlation_id,
                    HealthCheckOkBody { detail: "echo".into() }.encode(),
                ),
                _ => error_response(
                    env.correlation_id,
                    ErrorBody::new(ErrorCode::InvalidRequest, "echo only"),
                ),
            }
        }
    }

    fn cfg(min: u32, max: u32) -> DeploymentConfig {
        DeploymentConfig {
            service_kind: ServiceKind::Pca,
            min_replicas: min,
            max_replicas: max,
            scale_out_threshold: 0.75,
            scale_in_threshold: 0.2,
            cooldown_s: 1,
            probe_interval_s: 1,
            probe_failure_threshold: 3,
        }
    }

    fn echo_launcher() -> Box<InProcessLauncher> {
        Box::new(InProcessLauncher::new(PodConfig::default(), |_| Arc::new(Echo)))
    }

    async fn deploy(min: u32, max: u32) -> Arc<Deployment> {
        Deployment::new(cfg(min, max), echo_launcher(), ClientTransport::Plaintext, None)
            .await
            .unwrap()
    }

    #[tokio::test]
    async fn starts_at_min_and_routes_round_robin() {
        let d = deploy(3, 6).await;
        assert_eq!(d.replica_count().await, 3);
        // Pods are Starting until a probe passes.
        assert!(matches!(d.route().await, Err(OrchestratorError::NoReadyPods)));
        d.tick().await;
        assert!(d.live_pods().await.iter().all(|p| p.status == PodStatus::Ready));

        let mut per_pod: HashMap<String, u32> = HashMap::new();
        for i in 0..9u8 {
            let (pod_id, conn) = d.route().await.unwrap();
            let resp: EchoBody = conn
                .call(MsgType::Echo, &EchoBody { payload: vec![i] }, Duration::from_secs(1))
                .await
                .unwrap();
            assert_eq!(resp.payload, vec![i]);
            *per_pod.entry(pod_id).or_default() += 1;
        }
        assert_eq!(per_pod.len(), 3);
        assert!(per_pod.values().all(|&n| n == 3), "uneven split: {per_pod:?}");
        d.stop_all().await;
    }

    #[tokio::test]
    async fn faulty_pod_is_replaced_and_healthy_pod_unaffected() {
        let d = deploy(2, 6).await;
        d.tick().await;
        let pods = d.live_pods().await;
        let victim = pods[0].pod_id.clone();
        let survivor = pods[1].pod_id.clone();

        d.inject_fault(&victim, Fault::DropAll).await.unwrap();

        // Threshold 3: two failed probes mark it Unhealthy but keep it.
        d.tick().await;
        d.tick().await;
        let pods = d.live_pods().await;
        let sick = pods.iter().find(|p| p.pod_id == victim).unwrap();
        assert_eq!(sick.status, PodStatus::Unhealthy);
        assert_eq!(sick.consecutive_probe_failures, 2);
        // Routing already skips it.
        for _ in 0..4 {
            let (pod_id, _) = d.route().await.unwrap();
            assert_eq!(pod_id, survivor);
        }

        // Third failure crosses the threshold: replaced.
        let actions = d.tick().await;
        assert_eq!(actions, vec![ScalingAction::ReplacePod(victim.clone())]);
        assert_eq!(d.replica_count().await, 2);
        assert!(d.live_pods().await.iter().all(|p| p.pod_id != victim));
        let retired = d.retired_pods().await;
        assert!(retired.iter().any(|p| p.pod_id == victim && p.status == PodStatus::Terminated));

        // Next tick brings the replacement Ready; the survivor never left.
        d.tick().await;
        let pods = d.live_pods().await;
        assert!(pods.iter().all(|p| p.status == PodStatus::Ready));
        assert!(pods.iter().any(|p| p.pod_id == survivor));

        let events = d.events();
        assert!(events.iter().any(|e| e.action == "replace" && e.pod_id == victim));
        d.stop_all().await;
    }

    #[tokio::test]
    async fn proxy_forwards_and_reports_outage() {
        let d = deploy(1, 2).await;
        d.tick().await;
        let proxy = ProxyHandler::new(d.clone(), Duration::from_secs(1));
        let front = Server::bind(
            "127.0.0.1:0",
            ServerTransport::Plaintext,
            proxy,
            ShutdownSignal::new(),
        )
        .await
        .unwrap();
        let conn =
            Connection::connect(&front.local_addr().to_string(), &ClientTransport::Plaintext)
                .await
                .unwrap();
        let resp: EchoBody = conn
            .call(MsgType::Echo, &EchoBody { payload: vec![9] }, Duration::from_secs(1))
            .await
            .unwrap();
        assert_eq!(resp.payload, vec![9]);

        d.stop_all().await;
        let err = conn
            .call::<_, EchoBody>(MsgType::Echo, &EchoBody { payload: vec![1] }, Duration::from_secs(1))
            .await
            .unwrap_err();
        assert_eq!(err.code(), Some(ErrorCode::UpstreamUnavailable));
        front.stop(false).await;
    }

    #[tokio::test]
    async fn floor_repair_after_out_of_band_kill() {
        let d = deploy(2, 4).await;
        d.tick().await;
        let victim = d.live_pods().await[0].pod_id.clone();
        d.kill_pod(&victim, true).await;
        assert_eq!(d.replica_count().await, 1);
        let actions = d.tick().await;
        assert!(actions.iter().any(|a| matches!(a, ScalingAction::SpawnPod(_))));
        assert_eq!(d.replica_count().await, 2);
        d.tick().await;
        assert!(d.live_pods().await.iter().all(|p| p.status == PodStatus::Ready));
        d.stop_all().await;
    }
}
