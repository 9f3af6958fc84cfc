//! The scaling decision function and its inputs. Pure: identical inputs
//! produce identical actions, which is what makes the staircase in the
//! scaling log reproducible.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    Ltca,
    Pca,
}

impl std::fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServiceKind::Ltca => write!(f, "ltca"),
            ServiceKind::Pca => write!(f, "pca"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub service_kind: ServiceKind,
    pub min_replicas: u32,
    pub max_replicas: u32,
    /// Mean load over Ready pods above this: scale out.
    pub scale_out_threshold: f64,
    /// Mean load below this: scale in.
    pub scale_in_threshold: f64,
    /// Minimum spacing between scale actions. Replacements ignore it.
    pub cooldown_s: u64,
    pub probe_interval_s: u64,
    /// Consecutive failed probes before a pod is replaced.
    pub probe_failure_threshold: u32,
}

impl DeploymentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_replicas < 1 {
            return Err("min_replicas must be >= 1".into());
        }
        if self.max_replicas < self.min_replicas {
            return Err("max_replicas must be >= min_replicas".into());
        }
        if !(self.scale_out_threshold > 0.0 && self.scale_out_threshold <= 1.0) {
            return Err("scale_out_threshold must be in (0, 1]".into());
        }
        if !(self.scale_in_threshold >= 0.0 && self.scale_in_threshold < self.scale_out_threshold)
        {
            return Err("scale_in_threshold must be in [0, scale_out_threshold)".into());
        }
        if self.probe_interval_s == 0 {
            return Err("probe_interval_s must be >= 1".into());
        }
        if self.probe_failure_threshold < 1 {
            return Err("probe_failure_threshold must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PodStatus {
    Starting,
    Ready,
    Unhealthy,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodState {
    pub pod_id: String,
    pub service_kind: ServiceKind,
    pub status: PodStatus,
    /// Busy fraction over the last sampling window, in [0, 1].
    pub last_load: f64,
    pub consecutive_probe_failures: u32,
}

impl PodState {
    pub fn live(&self) -> bool {
        self.status != PodStatus::Terminated
    }
}

/// One sampling round over the live pods.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSnapshot {
    pub timestamp_ms: u64,
    /// Load samples for pods whose stats call succeeded this round.
    pub loads: Vec<(String, f64)>,
    /// Probe outcome for every live pod this round.
    pub health: Vec<(String, bool)>,
}

/// The slice of deployment state the decision function needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub pods: Vec<PodState>,
    /// When the last SpawnPod/KillPod was applied, if any.
    pub last_scale_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScalingAction {
    SpawnPod(ServiceKind),
    KillPod(String),
    ReplacePod(String),
}

impl ScalingAction {
    pub fn kind_str(&self) -> &'static str {
        match self {
            ScalingAction::SpawnPod(_) => "spawn",
            ScalingAction::KillPod(_) => "kill",
            ScalingAction::ReplacePod(_) => "replace",
        }
    }
}

/// One decision round.
///
/// Replacement first: any live pod at or past the probe-failure threshold
/// is replaced, and no scale decision is taken in the same step. Next the
/// floor is repaired: fewer live pods than `min_replicas` (a spawn failed,
/// or someone killed a pod out of band) spawns one immediately, cooldown
/// notwithstanding. Otherwise the mean load over Ready pods is compared
/// against the thresholds, gated by the cooldown and by every live pod
/// being Ready (a Starting pod means the previous action hasn't settled;
/// acting again would oscillate). Scale-in picks the least-loaded Ready
/// pod, ties broken by pod id.
pub fn controller_step(
    cfg: &DeploymentConfig,
    snapshot: &MetricsSnapshot,
    state: &ControllerState,
    now_ms: u64,
) -> Vec<ScalingAction> {
    let live: Vec<&PodState> = state.pods.iter().filter(|p| p.live()).collect();

    let replacements: Vec<ScalingAction> = live
        .iter()
        .filter(|p| p.consecutive_probe_failures >= cfg.probe_failure_threshold)
        .map(|p| ScalingAction::ReplacePod(p.pod_id.clone()))
        .collect();
    if !replacements.is_empty() {
        return replacements;
    }

    let starting = live.iter().any(|p| p.status == PodStatus::Starting);
    if (live.len() as u32) < cfg.min_replicas {
        return if starting { Vec::new() } else { vec![ScalingAction::SpawnPod(cfg.service_kind)] };
    }

    let all_ready = live.iter().all(|p| p.status == PodStatus::Ready);
    if live.is_empty() || !all_ready {
        return Vec::new();
    }
    let cooled = match state.last_scale_ms {
        None => true,
        Some(t) => now_ms.saturating_sub(t) >= cfg.cooldown_s * 1000,
    };
    if !cooled {
        return Vec::new();
    }

    let ready_loads: Vec<(&str, f64)> = live
        .iter()
        .filter_map(|p| {
            snapshot
                .loads
                .iter()
                .find(|(id, _)| *id == p.pod_id)
                .map(|(_, l)| (p.pod_id.as_str(), *l))
        })
        .collect();
    if ready_loads.is_empty() {
        return Vec::new();
    }
    let mean = ready_loads.iter().map(|(_, l)| l).sum::<f64>() / ready_loads.len() as f64;
    let replicas = live.len() as u32;

    if mean > cfg.scale_out_threshold && replicas < cfg.max_replicas {
        return vec![ScalingAction::SpawnPod(cfg.service_kind)];
    }
    if mean < cfg.scale_in_threshold && replicas > cfg.min_replicas {
        let victim = ready_loads
            .iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(b.0)))
            .map(|(id, _)| id.to_string())
            .unwrap();
        return vec![ScalingAction::KillPod(victim)];
    }
    Vec::new()
}
