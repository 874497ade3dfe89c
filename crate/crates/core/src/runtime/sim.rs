//! Deterministic discrete-event simulation of closed-loop users against a
//! [`Cluster`]. Virtual clock only.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::rng::{service_stream, stream, StreamTag};
use super::scenario::{ms_to_ns, FailureSpec, Scenario};
use super::wire::render_response;
use crate::domain::Status;
use crate::loadgen::{Op, Workload};
use crate::metrics::MetricsRecord;
use crate::orchestration::directory::InstanceId;
use crate::orchestration::{Cluster, ClusterError, Command, Counters, FailureTarget, FlightId, Mode, Ticket};
use crate::placement::ServiceKind;
use crate::store::{ConfigStore, StorageError, StoreStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub users: u32,
    pub warmup_s: f64,
    pub measure_s: f64,
    pub seed: u64,
    pub trace: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("workload: {0}")]
    Workload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEntry {
    pub time_ns: u64,
    pub seq: u64,
    pub tag: &'static str,
    pub subject: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub record: MetricsRecord,
    pub counters: Counters,
    pub in_flight_at_end: usize,
    /// Instance name → (largest in-service count seen, concurrency limit).
    pub max_in_service: BTreeMap<String, (u32, u32)>,
    /// Time-averaged requests outstanding at users during the measure window.
    pub mean_outstanding: f64,
    /// Responses delivered to users over the whole run.
    pub delivered: u64,
    pub duplicate_responses: u64,
    pub events: u64,
    pub end_ns: u64,
    pub store_stats: StoreStats,
    pub trace: Vec<TraceEntry>,
}

impl SimOutcome {
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            let _ = writeln!(out, "{} {} {} {}", e.time_ns, e.seq, e.tag, e.subject);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Issue(u32),
    Arrive(u32),
    StepDone(Ticket),
    Wake(FlightId),
    Deadline(FlightId),
    Deliver { user: u32, status: Status, bytes: u64 },
    Tick,
    Fail(usize),
}

impl Ev {
    fn tag(&self) -> (&'static str, u64) {
        match *self {
            Ev::Issue(u) => ("issue", u64::from(u)),
            Ev::Arrive(u) => ("arrive", u64::from(u)),
            Ev::StepDone(t) => ("step_done", t.0),
            Ev::Wake(f) => ("wake", f.0),
            Ev::Deadline(f) => ("deadline", f.0),
            Ev::Deliver { user, .. } => ("deliver", u64::from(user)),
            Ev::Tick => ("tick", 0),
            Ev::Fail(i) => ("fail", i as u64),
        }
    }
}

struct Queued {
    time: u64,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct User {
    rng: ChaCha8Rng,
    issued_ns: u64,
    op: Op,
    pending: Option<crate::orchestration::Submission>,
    sent: u64,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    workload: Workload,
    cluster: Cluster,
    seed: u64,
    queue: BinaryHeap<Queued>,
    seq: u64,
    now: u64,
    window: (u64, u64),
    users: Vec<User>,
    instance_rng: HashMap<(InstanceId, ServiceKind), ChaCha8Rng>,
    flight_user: HashMap<FlightId, u32>,
    responded: HashSet<FlightId>,
    record: MetricsRecord,
    max_in_service: BTreeMap<String, (u32, u32)>,
    outstanding: u64,
    area: f64,
    last_change: u64,
    delivered: u64,
    duplicates: u64,
    events: u64,
    trace: Option<Vec<TraceEntry>>,
}

impl Sim<'_> {
    fn push(&mut self, time: u64, ev: Ev) {
        self.queue.push(Queued {
            time,
            seq: self.seq,
            ev,
        });
        self.seq += 1;
    }

    fn note_outstanding(&mut self, delta: i64) {
        let (start, end) = self.window;
        let a = self.last_change.max(start);
        let b = self.now.min(end);
        if b > a {
            self.area += self.outstanding as f64 * (b - a) as f64;
        }
        self.last_change = self.now;
        self.outstanding = self.outstanding.checked_add_signed(delta).expect("outstanding >= 0");
    }

    fn apply(&mut self, commands: Vec<Command>) {
        for cmd in commands {
            match cmd {
                Command::Start {
                    ticket,
                    instance,
                    service,
                    ..
                } => {
                    let entry = self
                        .cluster
                        .directory()
                        .get(instance)
                        .expect("started on known instance");
                    let slot = self
                        .max_in_service
                        .entry(entry.name.clone())
                        .or_insert((0, entry.concurrency));
                    slot.0 = slot.0.max(entry.in_service);
                    let seed = self.seed;
                    let rng = self
                        .instance_rng
                        .entry((instance, service))
                        .or_insert_with(|| service_stream(seed, instance.0, service));
                    let dur = self.scenario.service_time(service).sample_ns(rng);
                    self.push(self.now + dur, Ev::StepDone(ticket));
                }
                Command::Wake { flight, at_ns } => self.push(at_ns, Ev::Wake(flight)),
                Command::Deadline { flight, at_ns } => self.push(at_ns, Ev::Deadline(flight)),
                Command::Respond(c) => {
                    if !self.responded.insert(c.flight) {
                        self.duplicates += 1;
                        continue;
                    }
                    let user = self.flight_user.remove(&c.flight).expect("flight has a user");
                    let u = &mut self.users[user as usize];
                    let (_, body) = render_response(u.op, &c);
                    let delay = self.scenario.link.sample_ns(body.len(), &mut u.rng);
                    self.push(
                        self.now + delay,
                        Ev::Deliver {
                            user,
                            status: c.status,
                            bytes: body.len() as u64,
                        },
                    );
                }
                Command::Scaled { instance, .. } => {
                    if let Some(t) = &mut self.trace {
                        t.push(TraceEntry {
                            time_ns: self.now,
                            seq: self.seq,
                            tag: "scaled",
                            subject: u64::from(instance.0),
                        });
                    }
                }
            }
        }
    }

    fn request_bytes(&self, user: u32, op: Op, profile: usize) -> usize {
        if self.scenario.link.bandwidth_bps.is_none() {
            return 0;
        }
        let p = &self.workload.profiles[profile];
        match op {
            Op::Read => 0,
            Op::Write => serde_json::to_vec(&crate::store::StoreRecord {
                key: p.key,
                config: p.config,
                version: 0,
                written_ts: 0,
            })
            .map_or(0, |b| b.len()),
            Op::Estimate => {
                serde_json::to_vec(&self.workload.envelope(profile, u64::from(user))).map_or(0, |b| b.len())
            }
        }
    }

    fn handle(&mut self, ev: Ev) -> Result<(), SimError> {
        let end = self.window.1;
        match ev {
            Ev::Issue(user) => {
                if self.now >= end {
                    return Ok(());
                }
                let u = &mut self.users[user as usize];
                let client_id = (u64::from(user) << 32) | u.sent;
                u.sent += 1;
                let draw = self.workload.draw(&mut u.rng, client_id);
                let bytes = self.request_bytes(user, draw.op, draw.profile);
                let u = &mut self.users[user as usize];
                let delay = self.scenario.link.sample_ns(bytes, &mut u.rng);
                u.issued_ns = self.now;
                u.op = draw.op;
                u.pending = Some(draw.submission);
                self.note_outstanding(1);
                self.push(self.now + delay, Ev::Arrive(user));
            }
            Ev::Arrive(user) => {
                let sub = self.users[user as usize].pending.take().expect("request in transit");
                let (flight, cmds) = self.cluster.submit(sub, self.now);
                self.flight_user.insert(flight, user);
                self.apply(cmds);
            }
            Ev::StepDone(ticket) => {
                let cmds = self.cluster.on_step_done(ticket, self.now);
                self.apply(cmds);
            }
            Ev::Wake(flight) => {
                let cmds = self.cluster.on_wake(flight, self.now);
                self.apply(cmds);
            }
            Ev::Deadline(flight) => {
                let cmds = self.cluster.on_deadline(flight, self.now);
                self.apply(cmds);
            }
            Ev::Deliver { user, status, bytes } => {
                self.delivered += 1;
                self.note_outstanding(-1);
                let u = &mut self.users[user as usize];
                if (self.window.0..end).contains(&self.now) {
                    let latency_ms = (self.now - u.issued_ns) as f64 / 1e6;
                    self.record.observe(status, latency_ms, bytes);
                }
                if self.now < end {
                    let think = self.workload.config.think_ms.sample_ns(&mut u.rng);
                    self.push(self.now + think, Ev::Issue(user));
                }
            }
            Ev::Tick => {
                let cmds = self.cluster.tick();
                self.apply(cmds);
                if self.now < end || self.cluster.in_flight() > 0 {
                    let tick = ms_to_ns(self.scenario.autoscaler.tick_ms).max(1);
                    self.push(self.now + tick, Ev::Tick);
                }
            }
            Ev::Fail(i) => {
                let target = match &self.scenario.failures[i].target {
                    FailureSpec::Node(n) => FailureTarget::Node(n.clone()),
                    FailureSpec::Instance(n) => FailureTarget::Instance(n.clone()),
                };
                let cmds = self.cluster.inject_failure(&target, self.now)?;
                self.apply(cmds);
            }
        }
        Ok(())
    }
}

/// Runs `opts.users` closed-loop users for warmup + measure seconds, then
/// lets every outstanding request finish. Samples are responses delivered
/// inside the measure window.
pub fn run_simulation(scenario: &Scenario, opts: &SimOptions) -> Result<SimOutcome, SimError> {
    let store = Arc::new(ConfigStore::in_memory());
    let workload =
        Workload::build(&scenario.workload, &scenario.estimator, &scenario.grid).map_err(SimError::Workload)?;
    if scenario.workload.prime_store {
        workload.prime(&store, 0)?;
    }
    let cluster = Cluster::new(scenario.cluster_config(), store.clone(), None)?;
    let start = ms_to_ns(opts.warmup_s * 1e3);
    let end = start + ms_to_ns(opts.measure_s * 1e3);
    let mut sim = Sim {
        scenario,
        record: MetricsRecord::new(
            scenario.mode.as_str(),
            scenario.site.as_str(),
            workload.config.label(),
            opts.users,
            opts.measure_s,
        ),
        workload,
        cluster,
        seed: opts.seed,
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0,
        window: (start, end),
        users: (0..opts.users)
            .map(|i| User {
                rng: stream(opts.seed, StreamTag::User, u64::from(i)),
                issued_ns: 0,
                op: Op::Read,
                pending: None,
                sent: 0,
            })
            .collect(),
        instance_rng: HashMap::new(),
        flight_user: HashMap::new(),
        responded: HashSet::new(),
        max_in_service: BTreeMap::new(),
        outstanding: 0,
        area: 0.0,
        last_change: 0,
        delivered: 0,
        duplicates: 0,
        events: 0,
        trace: opts.trace.then(Vec::new),
    };
    for u in 0..opts.users {
        sim.push(0, Ev::Issue(u));
    }
    for (i, f) in scenario.failures.iter().enumerate() {
        sim.push(ms_to_ns(f.at_s * 1e3), Ev::Fail(i));
    }
    if scenario.mode == Mode::KubeStyle {
        sim.push(ms_to_ns(scenario.autoscaler.tick_ms).max(1), Ev::Tick);
    }

    while let Some(Queued { time, seq, ev }) = sim.queue.pop() {
        debug_assert!(time >= sim.now, "clock went backwards");
        sim.now = time;
        sim.events += 1;
        if let Some(t) = &mut sim.trace {
            let (tag, subject) = ev.tag();
            t.push(TraceEntry {
                time_ns: time,
                seq,
                tag,
                subject,
            });
        }
        sim.handle(ev)?;
    }
    sim.note_outstanding(0);

    let window_ns = (end - start) as f64;
    Ok(SimOutcome {
        mean_outstanding: if window_ns > 0.0 { sim.area / window_ns } else { 0.0 },
        counters: sim.cluster.counters(),
        in_flight_at_end: sim.cluster.in_flight(),
        max_in_service: sim.max_in_service,
        delivered: sim.delivered,
        duplicate_responses: sim.duplicates,
        events: sim.events,
        end_ns: sim.now,
        store_stats: store.stats(),
        trace: sim.trace.unwrap_or_default(),
        record: sim.record,
    })
}
