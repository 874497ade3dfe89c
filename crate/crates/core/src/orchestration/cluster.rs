//! Time-agnostic orchestration state machine. Runtimes feed it submissions,
//! step completions, wake-ups, deadlines and ticks, and carry out the
//! [`Command`]s it returns.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::autoscale::{autoscale_tick, AutoscalerPolicy, AutoscalerState, ScalingAction};
use super::directory::{Health, InstanceEntry, InstanceId, ServiceDirectory};
use super::plan::{plan_workflow, PlanOptions, StepAction, StepCondition, WorkflowPlan};
use super::register::Register;
use super::ssi::Ssi;
use crate::domain::{
    make_config_key, BucketGrid, ChannelConfig, ChannelState, ConfigKey, QosRequirements, RequestEnvelope, RequestId,
    RequestKind, ResponseEnvelope, Status,
};
use crate::estimator::{derive_config, LinkBudgetParams};
use crate::placement::{place_ffd_assign, NodeCapacity, PlacementError, ServiceKind};
use crate::store::{ConfigStore, StoreRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Monolithic,
    SwarmStyle,
    KubeStyle,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Monolithic, Mode::SwarmStyle, Mode::KubeStyle];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Monolithic => "monolithic",
            Mode::SwarmStyle => "swarm_style",
            Mode::KubeStyle => "kube_style",
        }
    }

    /// Per-request Data Manager overhead.
    pub fn default_preprocess_ms(self) -> f64 {
        match self {
            Mode::Monolithic => 0.2,
            Mode::SwarmStyle => 0.5,
            Mode::KubeStyle => 0.8,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kinds a monolith serves.
pub const STEP_KINDS: [ServiceKind; 3] = [ServiceKind::Read, ServiceKind::Write, ServiceKind::Estimate];

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub mode: Mode,
    pub ssi: Ssi,
    /// Steps one replica serves at once, per kind. Missing kinds get 1.
    pub concurrency: BTreeMap<ServiceKind, u32>,
    pub monolith_concurrency: u32,
    pub preprocess_ms: f64,
    pub plan: PlanOptions,
    pub autoscaler: AutoscalerPolicy,
    pub grid: BucketGrid,
    pub estimator: LinkBudgetParams,
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error("no node or instance named {0:?}")]
    UnknownTarget(String),
    #[error("invalid cluster configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlightId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ticket(pub u64);

/// A request as the cluster sees it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Submission {
    pub client_id: RequestId,
    pub kind: RequestKind,
    pub key: ConfigKey,
    pub qos: Option<QosRequirements>,
    pub state: Option<ChannelState>,
    /// Explicit configuration to store (resource updates).
    pub payload: Option<ChannelConfig>,
    pub deadline_ms: f64,
}

impl Submission {
    pub fn from_envelope(req: &RequestEnvelope, grid: &BucketGrid) -> Self {
        Self {
            client_id: req.id,
            kind: req.kind,
            key: make_config_key(&req.qos, &req.state, grid),
            qos: Some(req.qos),
            state: Some(req.state),
            payload: None,
            deadline_ms: req.deadline_ms,
        }
    }

    pub fn query(client_id: RequestId, key: ConfigKey, deadline_ms: f64) -> Self {
        Self {
            client_id,
            kind: RequestKind::ResourceQuery,
            key,
            qos: None,
            state: None,
            payload: None,
            deadline_ms,
        }
    }

    pub fn update(client_id: RequestId, key: ConfigKey, config: ChannelConfig, deadline_ms: f64) -> Self {
        Self {
            client_id,
            kind: RequestKind::ResourceUpdate,
            key,
            qos: None,
            state: None,
            payload: Some(config),
            deadline_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub flight: FlightId,
    pub client_id: RequestId,
    pub kind: RequestKind,
    pub status: Status,
    pub config: Option<ChannelConfig>,
    pub record: Option<StoreRecord>,
    pub arrival_ns: u64,
    pub completion_ns: u64,
    pub reason: Option<String>,
}

impl Completion {
    pub fn envelope(&self) -> ResponseEnvelope {
        ResponseEnvelope {
            id: self.client_id,
            status: self.status,
            config: self.config,
            completion_ts: self.completion_ns,
            payload_bytes: 0,
        }
    }

    pub fn latency_ns(&self) -> u64 {
        self.completion_ns - self.arrival_ns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// Run one step of `flight` on `instance`; report back with
    /// [`Cluster::on_step_done`].
    Start {
        ticket: Ticket,
        flight: FlightId,
        instance: InstanceId,
        service: ServiceKind,
    },
    /// Call [`Cluster::on_wake`] at `at_ns`.
    Wake {
        flight: FlightId,
        at_ns: u64,
    },
    /// Call [`Cluster::on_deadline`] at `at_ns`.
    Deadline {
        flight: FlightId,
        at_ns: u64,
    },
    Respond(Completion),
    Scaled {
        action: ScalingAction,
        instance: InstanceId,
        node: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureTarget {
    Node(String),
    Instance(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub submitted: u64,
    pub ok: u64,
    pub timeout: u64,
    pub rejected: u64,
    pub failed: u64,
}

impl Counters {
    pub fn completed(&self) -> u64 {
        self.ok + self.timeout + self.rejected + self.failed
    }

    fn bump(&mut self, status: Status) {
        match status {
            Status::Ok => self.ok += 1,
            Status::Timeout => self.timeout += 1,
            Status::Rejected => self.rejected += 1,
            Status::Failed => self.failed += 1,
        }
    }
}

#[derive(Debug)]
struct Flight {
    sub: Submission,
    arrival_ns: u64,
    deadline_ns: u64,
    cursor: usize,
    attempts: u32,
    hit: Option<StoreRecord>,
    estimated: Option<ChannelConfig>,
    written: Option<StoreRecord>,
    queued: bool,
}

enum Next {
    Advance,
    RetryAt(u64),
    Finish(Status, String),
}

pub struct Cluster {
    config: ClusterConfig,
    plans: BTreeMap<RequestKind, WorkflowPlan>,
    store: Arc<ConfigStore>,
    results: Option<Arc<ConfigStore>>,
    directory: ServiceDirectory,
    register: Register<FlightId>,
    nodes: Vec<NodeCapacity>,
    next_node: usize,
    next_instance: u32,
    names_used: BTreeMap<ServiceKind, u32>,
    flights: HashMap<FlightId, Flight>,
    active: HashMap<Ticket, (FlightId, InstanceId)>,
    next_flight: u64,
    next_ticket: u64,
    counters: Counters,
    autoscaler: AutoscalerState,
    epoch_ns: u64,
}

impl Cluster {
    pub fn new(
        config: ClusterConfig,
        store: Arc<ConfigStore>,
        results: Option<Arc<ConfigStore>>,
    ) -> Result<Self, ClusterError> {
        if !(config.preprocess_ms >= 0.0 && config.preprocess_ms.is_finite()) {
            return Err(ClusterError::Invalid(format!(
                "preprocess_ms must be non-negative, got {}",
                config.preprocess_ms
            )));
        }
        if config.concurrency.values().any(|&c| c == 0) || config.monolith_concurrency == 0 {
            return Err(ClusterError::Invalid("concurrency must be positive".into()));
        }
        let plans = RequestKind::ALL
            .iter()
            .map(|&k| (k, plan_workflow(k, &config.plan)))
            .collect();
        let mut cluster = Self {
            register: Register::new(config.ssi.limits.register_capacity),
            config,
            plans,
            store,
            results,
            directory: ServiceDirectory::new(),
            nodes: Vec::new(),
            next_node: 0,
            next_instance: 0,
            names_used: BTreeMap::new(),
            flights: HashMap::new(),
            active: HashMap::new(),
            next_flight: 0,
            next_ticket: 0,
            counters: Counters::default(),
            autoscaler: AutoscalerState::default(),
            epoch_ns: 0,
        };
        cluster.deploy()?;
        Ok(cluster)
    }

    fn deploy(&mut self) -> Result<(), ClusterError> {
        match self.config.mode {
            Mode::Monolithic => {
                let node = "mono-0".to_string();
                self.nodes.push(NodeCapacity::empty(
                    node.clone(),
                    self.config.ssi.node_template.cpu_millicores_total,
                    self.config.ssi.node_template.mem_mb_total,
                ));
                self.next_node = 1;
                self.directory.insert(InstanceEntry {
                    instance_id: InstanceId(0),
                    name: "monolith".into(),
                    node_id: node,
                    kinds: STEP_KINDS.to_vec(),
                    health: Health::Ready,
                    in_service: 0,
                    concurrency: self.config.monolith_concurrency,
                });
                self.next_instance = 1;
            }
            Mode::SwarmStyle | Mode::KubeStyle => {
                let specs = self.config.ssi.initial_instances();
                let (nodes, assignment) = place_ffd_assign(&specs, &self.config.ssi.node_template)?;
                self.next_node = nodes.len();
                for (spec, node) in specs.iter().zip(assignment) {
                    let node_id = nodes[node].node_id.clone();
                    self.add_instance(spec.service_kind, node_id);
                }
                self.nodes = nodes;
            }
        }
        Ok(())
    }

    fn add_instance(&mut self, kind: ServiceKind, node_id: String) -> InstanceId {
        let id = InstanceId(self.next_instance);
        self.next_instance += 1;
        let n = self.names_used.entry(kind).or_default();
        let name = format!("{kind}-{n}");
        *n += 1;
        self.directory.insert(InstanceEntry {
            instance_id: id,
            name,
            node_id,
            kinds: vec![kind],
            health: Health::Ready,
            in_service: 0,
            concurrency: self.config.concurrency.get(&kind).copied().unwrap_or(1),
        });
        id
    }

    /// Offset added to cluster time when stamping store records.
    pub fn set_epoch_ns(&mut self, epoch_ns: u64) {
        self.epoch_ns = epoch_ns;
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn directory(&self) -> &ServiceDirectory {
        &self.directory
    }

    pub fn register(&self) -> &Register<FlightId> {
        &self.register
    }

    pub fn nodes(&self) -> &[NodeCapacity] {
        &self.nodes
    }

    pub fn ssi(&self) -> &Ssi {
        &self.config.ssi
    }

    pub fn store(&self) -> &Arc<ConfigStore> {
        &self.store
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn in_flight(&self) -> usize {
        self.flights.len()
    }

    /// submitted = completed + in flight.
    pub fn conserved(&self) -> bool {
        self.counters.submitted == self.counters.completed() + self.flights.len() as u64
    }

    pub fn submit(&mut self, sub: Submission, now_ns: u64) -> (FlightId, Vec<Command>) {
        let id = FlightId(self.next_flight);
        self.next_flight += 1;
        self.counters.submitted += 1;
        let deadline_ns = (sub.deadline_ms * 1e6).ceil() as u64;
        self.flights.insert(
            id,
            Flight {
                sub,
                arrival_ns: now_ns,
                deadline_ns,
                cursor: 0,
                attempts: 0,
                hit: None,
                estimated: None,
                written: None,
                queued: false,
            },
        );
        let mut out = vec![Command::Deadline {
            flight: id,
            at_ns: now_ns.saturating_add(deadline_ns).saturating_add(1),
        }];
        let pre = (self.config.preprocess_ms * 1e6).round() as u64;
        if pre > 0 {
            out.push(Command::Wake {
                flight: id,
                at_ns: now_ns + pre,
            });
        } else {
            self.advance(id, now_ns, &mut out);
        }
        (id, out)
    }

    pub fn on_wake(&mut self, flight: FlightId, now_ns: u64) -> Vec<Command> {
        let mut out = Vec::new();
        if self.flights.contains_key(&flight) {
            self.advance(flight, now_ns, &mut out);
        }
        out
    }

    pub fn on_deadline(&mut self, flight: FlightId, now_ns: u64) -> Vec<Command> {
        let mut out = Vec::new();
        if let Some(f) = self.flights.get(&flight) {
            if now_ns - f.arrival_ns > f.deadline_ns {
                self.finish(
                    flight,
                    Status::Timeout,
                    Some("deadline exceeded".into()),
                    now_ns,
                    &mut out,
                );
            }
        }
        out
    }

    pub fn on_step_done(&mut self, ticket: Ticket, now_ns: u64) -> Vec<Command> {
        let mut out = Vec::new();
        let Some((flight, instance)) = self.active.remove(&ticket) else {
            return out;
        };
        let instance_up = self.directory.release(instance);
        let next = self.flights.contains_key(&flight).then(|| self.perform(flight, now_ns));
        // a monolith worker carries a request through all of its steps
        let mut carried = false;
        if instance_up && self.config.mode == Mode::Monolithic && matches!(next, Some(Next::Advance)) {
            if let Some(kind) = self.next_service(flight) {
                if self.directory.get(instance).is_some_and(|e| e.kinds.contains(&kind)) {
                    self.start(flight, instance, kind, &mut out);
                    carried = true;
                }
            }
        }
        if instance_up {
            self.drain(instance, &mut out);
        }
        match next {
            None => {}
            Some(Next::Advance) if carried => {}
            Some(Next::Advance) => self.advance(flight, now_ns, &mut out),
            Some(Next::RetryAt(at_ns)) => out.push(Command::Wake { flight, at_ns }),
            Some(Next::Finish(status, reason)) => self.finish(flight, status, Some(reason), now_ns, &mut out),
        }
        out
    }

    /// Autoscaler evaluation; only the kube-style mode scales.
    pub fn tick(&mut self) -> Vec<Command> {
        let mut out = Vec::new();
        if self.config.mode != Mode::KubeStyle {
            return out;
        }
        let actions = autoscale_tick(
            &self.directory,
            &self.register,
            &self.config.ssi,
            &self.config.autoscaler,
            &mut self.autoscaler,
        );
        for action in actions {
            match action {
                ScalingAction::ScaleUp(kind) => self.scale_up(kind, &mut out),
                ScalingAction::ScaleDown(kind) => self.scale_down(kind, &mut out),
            }
        }
        out
    }

    pub fn inject_failure(&mut self, target: &FailureTarget, now_ns: u64) -> Result<Vec<Command>, ClusterError> {
        let victims: Vec<InstanceId> = match target {
            FailureTarget::Node(node) => {
                if !self.nodes.iter().any(|n| &n.node_id == node) {
                    return Err(ClusterError::UnknownTarget(node.clone()));
                }
                self.directory.on_node(node).collect()
            }
            FailureTarget::Instance(name) => vec![
                self.directory
                    .by_name(name)
                    .ok_or_else(|| ClusterError::UnknownTarget(name.clone()))?
                    .instance_id,
            ],
        };
        let mut out = Vec::new();
        for &v in &victims {
            if !self.directory.mark_down(v) {
                continue;
            }
            let name = self.directory.get(v).map(|e| e.name.clone()).unwrap_or_default();
            log::warn!("instance {name} marked down");
            let mut hit: Vec<(Ticket, FlightId)> = self
                .active
                .iter()
                .filter(|(_, (_, inst))| *inst == v)
                .map(|(t, (f, _))| (*t, *f))
                .collect();
            hit.sort();
            for (ticket, flight) in hit {
                self.active.remove(&ticket);
                if self.flights.contains_key(&flight) {
                    self.finish(
                        flight,
                        Status::Failed,
                        Some(format!("instance {name} failed")),
                        now_ns,
                        &mut out,
                    );
                }
            }
        }
        for kind in STEP_KINDS {
            let live = self.directory.live_count(kind) > 0;
            if let Some(d) = self.config.ssi.dynamic.get_mut(&kind) {
                d.available = live;
            }
            if !live {
                for flight in self.register.drain_kind(kind) {
                    if let Some(f) = self.flights.get_mut(&flight) {
                        f.queued = false;
                    }
                    self.finish(
                        flight,
                        Status::Failed,
                        Some(format!("no live {kind} instance")),
                        now_ns,
                        &mut out,
                    );
                }
            }
        }
        Ok(out)
    }

    /// Runs `sub` to completion with zero service time, carrying out
    /// wake-ups immediately. Other in-flight work is left untouched.
    pub fn run_inline(&mut self, sub: Submission, now_ns: u64) -> Completion {
        let (me, first) = self.submit(sub, now_ns);
        let mut t = now_ns;
        let mut queue: VecDeque<Command> = first.into();
        while let Some(cmd) = queue.pop_front() {
            let more = match cmd {
                Command::Start { ticket, .. } => self.on_step_done(ticket, t),
                Command::Wake { flight, at_ns } => {
                    t = t.max(at_ns);
                    self.on_wake(flight, t)
                }
                Command::Respond(c) if c.flight == me => return c,
                _ => Vec::new(),
            };
            queue.extend(more);
        }
        panic!("flight {me:?} stalled: no live instance or capacity to finish it");
    }

    /// Skips satisfied on-miss steps; `None` means the next step is the
    /// response.
    fn next_service(&mut self, id: FlightId) -> Option<ServiceKind> {
        let f = self.flights.get_mut(&id)?;
        loop {
            let step = self.plans[&f.sub.kind].steps[f.cursor];
            if step.condition == StepCondition::OnMiss && f.hit.is_some() {
                f.cursor += 1;
                continue;
            }
            return step.action.service_kind();
        }
    }

    fn advance(&mut self, id: FlightId, now_ns: u64, out: &mut Vec<Command>) {
        if !self.flights.contains_key(&id) {
            return;
        }
        match self.next_service(id) {
            None => self.finish(id, Status::Ok, None, now_ns, out),
            Some(kind) => self.route(id, kind, now_ns, out),
        }
    }

    fn route(&mut self, id: FlightId, kind: ServiceKind, now_ns: u64, out: &mut Vec<Command>) {
        if let Some(instance) = self.directory.pick_ready(kind) {
            self.start(id, instance, kind, out);
        } else if self.directory.live_count(kind) == 0 {
            self.finish(
                id,
                Status::Failed,
                Some(format!("no live {kind} instance")),
                now_ns,
                out,
            );
        } else if let Err(full) = self.register.enqueue(kind, id) {
            self.finish(id, Status::Rejected, Some(full.to_string()), now_ns, out);
        } else {
            self.flights.get_mut(&id).expect("flight").queued = true;
        }
    }

    fn start(&mut self, id: FlightId, instance: InstanceId, service: ServiceKind, out: &mut Vec<Command>) {
        self.directory.acquire(instance);
        let ticket = Ticket(self.next_ticket);
        self.next_ticket += 1;
        self.active.insert(ticket, (id, instance));
        out.push(Command::Start {
            ticket,
            flight: id,
            instance,
            service,
        });
    }

    /// Hands freed slots of `instance` to the oldest waiting flights.
    fn drain(&mut self, instance: InstanceId, out: &mut Vec<Command>) {
        let kinds = match self.directory.get(instance) {
            Some(e) => e.kinds.clone(),
            None => return,
        };
        while self.directory.get(instance).is_some_and(|e| e.health == Health::Ready) {
            let Some((kind, flight)) = self.register.dequeue_oldest(&kinds) else {
                break;
            };
            match self.flights.get_mut(&flight) {
                Some(f) => f.queued = false,
                None => continue,
            }
            self.start(flight, instance, kind, out);
        }
    }

    /// Carries out the effect of the step that just finished.
    fn perform(&mut self, id: FlightId, now_ns: u64) -> Next {
        let f = self.flights.get_mut(&id).expect("flight");
        let step = self.plans[&f.sub.kind].steps[f.cursor];
        match step.action {
            StepAction::Read => {
                let record = self.store.read(&f.sub.key);
                f.attempts += 1;
                if record.is_none() {
                    if let Some(retry) = step.retry {
                        if f.attempts <= retry.max_retries {
                            return Next::RetryAt(now_ns + (retry.interval_ms * 1e6).round() as u64);
                        }
                        return Next::Finish(Status::Rejected, "no configuration for key".into());
                    }
                }
                f.hit = record;
                f.attempts = 0;
            }
            StepAction::Estimate => {
                let (Some(qos), Some(state)) = (f.sub.qos, f.sub.state) else {
                    return Next::Finish(Status::Rejected, "estimate needs link state".into());
                };
                match derive_config(&qos, &state, &self.config.estimator) {
                    Some(c) => f.estimated = Some(c),
                    None => return Next::Finish(Status::Rejected, "no modulation meets ber_max".into()),
                }
            }
            StepAction::Write => {
                let derived = || match (f.sub.qos, f.sub.state) {
                    (Some(q), Some(s)) => derive_config(&q, &s, &self.config.estimator),
                    _ => None,
                };
                let config = f
                    .sub
                    .payload
                    .or(f.estimated)
                    .or(f.hit.map(|r| r.config))
                    .or_else(derived);
                let Some(config) = config else {
                    return Next::Finish(Status::Rejected, "nothing to write".into());
                };
                let ts = self.epoch_ns + now_ns;
                match self.store.write_at(f.sub.key, config, ts) {
                    Ok(rec) => {
                        f.written = Some(rec);
                        if let Some(results) = &self.results {
                            if let Err(e) = results.write_at(rec.key, rec.config, ts) {
                                log::warn!("results store: {e}");
                            }
                        }
                    }
                    Err(e) => return Next::Finish(Status::Failed, e.to_string()),
                }
            }
            StepAction::Respond => unreachable!("respond is not a service step"),
        }
        f.cursor += 1;
        Next::Advance
    }

    fn finish(&mut self, id: FlightId, status: Status, reason: Option<String>, now_ns: u64, out: &mut Vec<Command>) {
        let Some(f) = self.flights.remove(&id) else { return };
        if f.queued {
            self.register.remove(&id);
        }
        self.counters.bump(status);
        let record = f.written.or(f.hit);
        let config = if status == Status::Ok {
            f.written.map(|r| r.config).or(f.estimated).or(f.hit.map(|r| r.config))
        } else {
            None
        };
        out.push(Command::Respond(Completion {
            flight: id,
            client_id: f.sub.client_id,
            kind: f.sub.kind,
            status,
            config,
            record: if status == Status::Ok { record } else { None },
            arrival_ns: f.arrival_ns,
            completion_ns: now_ns,
            reason,
        }));
    }

    fn scale_up(&mut self, kind: ServiceKind, out: &mut Vec<Command>) {
        let Some(spec) = self.config.ssi.service(kind).map(|s| s.instance_spec()) else {
            return;
        };
        let node_idx = match self.nodes.iter().position(|n| n.fits(&spec)) {
            Some(i) => i,
            None => {
                let template = &self.config.ssi.node_template;
                if !template.fits(&spec) {
                    log::warn!("cannot scale {kind}: instance larger than node template");
                    return;
                }
                self.nodes.push(template.fresh(self.next_node));
                self.next_node += 1;
                self.nodes.len() - 1
            }
        };
        self.nodes[node_idx].assigned.push(spec);
        let node = self.nodes[node_idx].node_id.clone();
        let instance = self.add_instance(kind, node.clone());
        if let Some(d) = self.config.ssi.dynamic.get_mut(&kind) {
            d.current_replicas += 1;
            d.available = true;
        }
        log::info!("scaled up {kind}: {instance} on {node}");
        out.push(Command::Scaled {
            action: ScalingAction::ScaleUp(kind),
            instance,
            node,
        });
        self.drain(instance, out);
    }

    fn scale_down(&mut self, kind: ServiceKind, out: &mut Vec<Command>) {
        let Some(victim) = self
            .directory
            .live(kind)
            .filter(|e| e.in_service == 0)
            .map(|e| e.instance_id)
            .max()
        else {
            return;
        };
        let entry = self.directory.remove(victim).expect("victim exists");
        if let Some(pos) = self.nodes.iter().position(|n| n.node_id == entry.node_id) {
            let node = &mut self.nodes[pos];
            if let Some(i) = node.assigned.iter().position(|s| s.service_kind == kind) {
                node.assigned.remove(i);
            }
            if node.assigned.is_empty() {
                self.nodes.remove(pos);
            }
        }
        if let Some(d) = self.config.ssi.dynamic.get_mut(&kind) {
            d.current_replicas -= 1;
        }
        log::info!("scaled down {kind}: removed {victim}");
        out.push(Command::Scaled {
            action: ScalingAction::ScaleDown(kind),
            instance: victim,
            node: entry.node_id,
        });
    }
}
