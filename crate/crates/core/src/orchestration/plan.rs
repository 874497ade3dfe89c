use serde::{Deserialize, Serialize};

use crate::domain::RequestKind;
use crate::placement::ServiceKind;
use crate::store::ReadRetry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    Read,
    Write,
    Estimate,
    Respond,
}

impl StepAction {
    pub fn service_kind(self) -> Option<ServiceKind> {
        match self {
            StepAction::Read => Some(ServiceKind::Read),
            StepAction::Write => Some(ServiceKind::Write),
            StepAction::Estimate => Some(ServiceKind::Estimate),
            StepAction::Respond => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCondition {
    Always,
    /// Skipped when an earlier read found a record.
    OnMiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub action: StepAction,
    pub condition: StepCondition,
    pub retry: Option<ReadRetry>,
}

impl PlanStep {
    fn always(action: StepAction) -> Self {
        Self {
            action,
            condition: StepCondition::Always,
            retry: None,
        }
    }

    fn on_miss(action: StepAction) -> Self {
        Self {
            action,
            condition: StepCondition::OnMiss,
            retry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowPlan {
    pub kind: RequestKind,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOptions {
    pub traffic_engineer_reads: usize,
    pub user_assign_retry: ReadRetry,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            traffic_engineer_reads: 3,
            user_assign_retry: ReadRetry::default(),
        }
    }
}

/// The fixed step sequence for a request kind. Every plan ends in exactly one
/// `Respond`.
pub fn plan_workflow(kind: RequestKind, options: &PlanOptions) -> WorkflowPlan {
    use StepAction::*;
    let steps = match kind {
        RequestKind::UserAssign => vec![
            PlanStep {
                retry: Some(options.user_assign_retry),
                ..PlanStep::always(Read)
            },
            PlanStep::always(Write),
            PlanStep::always(Respond),
        ],
        RequestKind::ResourceQuery => vec![PlanStep::always(Read), PlanStep::always(Respond)],
        RequestKind::ResourceUpdate => vec![
            PlanStep::always(Read),
            PlanStep::always(Write),
            PlanStep::always(Respond),
        ],
        RequestKind::TrafficEngineer => {
            let mut steps = vec![PlanStep::always(Read); options.traffic_engineer_reads.max(1)];
            steps.push(PlanStep::always(Respond));
            steps
        }
        RequestKind::ChannelEstimate => vec![
            PlanStep::always(Read),
            PlanStep::on_miss(Estimate),
            PlanStep::on_miss(Write),
            PlanStep::always(Respond),
        ],
    };
    WorkflowPlan { kind, steps }
}
