//! Desk-scale replica orchestration: pods (service replicas wrapped with
//! load accounting and fault injection), a pure scaling controller, health
//! probing, round-robin routing, and the deployment manager tying them
//! together. A stand-in for a container control plane, small enough to
//! reason about and deterministic enough to test.

mod controller;
mod launcher;
mod manager;
mod pod;

pub use controller::{
    controller_step, ControllerState, DeploymentConfig, MetricsSnapshot, PodState, PodStatus,
    ScalingAction, ServiceKind,
};
pub use launcher::{InProcessLauncher, PodHandle, PodLauncher, SpawnError, SubprocessLauncher};
pub use manager::{Deployment, OrchestratorError, ProxyHandler, ScalingEvent};
pub use pod::{PodConfig, PodHandler};
