use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::directory::ServiceDirectory;
use super::register::Register;
use super::ssi::Ssi;
use crate::placement::ServiceKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoscalerPolicy {
    /// Backlog above which a tick counts towards scaling up.
    pub up_threshold: usize,
    pub sustain_ticks: u32,
    pub idle_ticks: u32,
    pub tick_ms: f64,
}

impl Default for AutoscalerPolicy {
    fn default() -> Self {
        Self {
            up_threshold: 10,
            sustain_ticks: 3,
            idle_ticks: 10,
            tick_ms: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "service_kind", rename_all = "snake_case")]
pub enum ScalingAction {
    ScaleUp(ServiceKind),
    ScaleDown(ServiceKind),
}

#[derive(Debug, Clone, Default)]
pub struct AutoscalerState {
    backlogged: BTreeMap<ServiceKind, u32>,
    idle: BTreeMap<ServiceKind, u32>,
}

/// One evaluation: scale a kind up after `sustain_ticks` consecutive ticks
/// of backlog above the threshold, down after `idle_ticks` consecutive ticks
/// with nothing queued or in service. Replica limits are never crossed.
pub fn autoscale_tick<T: PartialEq>(
    directory: &ServiceDirectory,
    register: &Register<T>,
    ssi: &Ssi,
    policy: &AutoscalerPolicy,
    state: &mut AutoscalerState,
) -> Vec<ScalingAction> {
    let mut actions = Vec::new();
    for s in &ssi.static_services {
        let kind = s.service_kind;
        let backlog = register.len(kind);
        let current = ssi.replicas(kind);

        let up = state.backlogged.entry(kind).or_default();
        *up = if backlog > policy.up_threshold { *up + 1 } else { 0 };
        let idle_now = backlog == 0 && directory.live(kind).all(|e| e.in_service == 0);
        let down = state.idle.entry(kind).or_default();
        *down = if idle_now { *down + 1 } else { 0 };

        if state.backlogged[&kind] >= policy.sustain_ticks && current < ssi.limits.max_replicas_per_kind {
            actions.push(ScalingAction::ScaleUp(kind));
            state.backlogged.insert(kind, 0);
        } else if state.idle[&kind] >= policy.idle_ticks && current > ssi.limits.min_replicas_per_kind {
            actions.push(ScalingAction::ScaleDown(kind));
            state.idle.insert(kind, 0);
        }
    }
    actions
}
