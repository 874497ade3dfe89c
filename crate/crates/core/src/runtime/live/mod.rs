//! The cluster behind a real HTTP/1.1 listener. Service and link times are
//! emulated with the timer thread; all cluster state changes go through one
//! control thread, so the state machine stays single-threaded.

pub mod http;
pub mod timer;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpSocket, TcpStream};
use tokio::sync::{oneshot, watch};
use tokio::task::JoinSet;

use self::http::{read_message, write_response, HttpError, Message};
use self::timer::{Timer, TimerThread};
use super::rng::{service_stream, stream, StreamTag};
use super::scenario::{ms_to_ns, Dist, FailureSpec, LinkModel, Scenario};
use super::wire::{decode_key, render_response, NOT_FOUND_BODY};
use crate::domain::{validate_request, ChannelConfig, ConfigKey, RequestEnvelope};
use crate::loadgen::{Op, Workload};
use crate::orchestration::directory::InstanceId;
use crate::orchestration::{
    Cluster, ClusterError, Command, Completion, Counters, FailureTarget, FlightId, Mode, Submission, Ticket,
};
use crate::placement::ServiceKind;
use crate::store::{now_unix_ns, ConfigStore, StorageError};

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("workload: {0}")]
    Workload(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub seed: u64,
    /// Delay every request and response by the scenario's link model.
    pub emulate_link: bool,
    /// Longest wait for in-flight requests after shutdown is requested.
    pub drain_timeout: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            emulate_link: true,
            drain_timeout: Duration::from_secs(15),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStats {
    pub submitted: u64,
    pub ok: u64,
    pub timeout: u64,
    pub rejected: u64,
    pub failed: u64,
    pub in_flight: u64,
    pub connections: u64,
}

impl ServerStats {
    fn new(c: Counters, in_flight: usize, connections: u64) -> Self {
        Self {
            submitted: c.submitted,
            ok: c.ok,
            timeout: c.timeout,
            rejected: c.rejected,
            failed: c.failed,
            in_flight: in_flight as u64,
            connections,
        }
    }

    /// submitted = completed + in flight
    pub fn conserved(&self) -> bool {
        self.submitted == self.ok + self.timeout + self.rejected + self.failed + self.in_flight
    }
}

/// A listener with a backlog large enough for a burst of 1300+ connects.
pub fn bind(addr: SocketAddr) -> Result<TcpListener, LiveError> {
    let err = |source| LiveError::Bind { addr, source };
    let socket = if addr.is_ipv4() {
        TcpSocket::new_v4()
    } else {
        TcpSocket::new_v6()
    }
    .map_err(err)?;
    socket.set_reuseaddr(true).map_err(err)?;
    socket.bind(addr).map_err(err)?;
    socket.listen(4096).map_err(err)
}

enum Ctl {
    Submit {
        sub: Submission,
        reply: oneshot::Sender<Completion>,
    },
    StepDone(Ticket),
    Wake(FlightId),
    Deadline(FlightId),
    Tick,
    Fail {
        target: FailureTarget,
        reply: Option<oneshot::Sender<Result<(), String>>>,
    },
    Stats(oneshot::Sender<(Counters, usize)>),
    /// Reply once nothing is in flight.
    Drain(oneshot::Sender<()>),
    Halt,
}

struct Control {
    cluster: Cluster,
    timer: Timer,
    tx: mpsc::Sender<Ctl>,
    start: Instant,
    seed: u64,
    service_time_ms: HashMap<ServiceKind, Dist>,
    instance_rng: HashMap<(InstanceId, ServiceKind), ChaCha8Rng>,
    waiting: HashMap<FlightId, oneshot::Sender<Completion>>,
    tick: Option<Duration>,
    drained: Vec<oneshot::Sender<()>>,
}

impl Control {
    fn now_ns(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    fn at(&self, ns: u64) -> Instant {
        self.start + Duration::from_nanos(ns)
    }

    fn send_at(&self, at: Instant, msg: Ctl) {
        let tx = self.tx.clone();
        self.timer.schedule(at, move || {
            let _ = tx.send(msg);
        });
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
                    let seed = self.seed;
                    let rng = self
                        .instance_rng
                        .entry((instance, service))
                        .or_insert_with(|| service_stream(seed, instance.0, service));
                    let dur = self.service_time_ms.get(&service).map_or(0, |d| d.sample_ns(rng));
                    self.send_at(Instant::now() + Duration::from_nanos(dur), Ctl::StepDone(ticket));
                }
                Command::Wake { flight, at_ns } => self.send_at(self.at(at_ns), Ctl::Wake(flight)),
                Command::Deadline { flight, at_ns } => self.send_at(self.at(at_ns), Ctl::Deadline(flight)),
                Command::Respond(c) => {
                    if let Some(reply) = self.waiting.remove(&c.flight) {
                        let _ = reply.send(c);
                    }
                }
                Command::Scaled { action, instance, node } => {
                    log::info!("{action:?}: {instance} on {node}");
                }
            }
        }
    }

    fn run(mut self, rx: mpsc::Receiver<Ctl>) {
        if let Some(tick) = self.tick {
            self.send_at(Instant::now() + tick, Ctl::Tick);
        }
        while let Ok(msg) = rx.recv() {
            let now = self.now_ns();
            match msg {
                Ctl::Submit { sub, reply } => {
                    let (flight, cmds) = self.cluster.submit(sub, now);
                    self.waiting.insert(flight, reply);
                    self.apply(cmds);
                }
                Ctl::StepDone(t) => {
                    let cmds = self.cluster.on_step_done(t, now);
                    self.apply(cmds);
                }
                Ctl::Wake(f) => {
                    let cmds = self.cluster.on_wake(f, now);
                    self.apply(cmds);
                }
                Ctl::Deadline(f) => {
                    let cmds = self.cluster.on_deadline(f, now);
                    self.apply(cmds);
                }
                Ctl::Tick => {
                    let cmds = self.cluster.tick();
                    self.apply(cmds);
                    if let Some(tick) = self.tick {
                        self.send_at(Instant::now() + tick, Ctl::Tick);
                    }
                }
                Ctl::Fail { target, reply } => {
                    let result = self.cluster.inject_failure(&target, now);
                    let outcome = match result {
                        Ok(cmds) => {
                            self.apply(cmds);
                            Ok(())
                        }
                        Err(e) => Err(e.to_string()),
                    };
                    if let Err(e) = &outcome {
                        log::warn!("failure injection: {e}");
                    }
                    if let Some(reply) = reply {
                        let _ = reply.send(outcome);
                    }
                }
                Ctl::Stats(reply) => {
                    let _ = reply.send((self.cluster.counters(), self.cluster.in_flight()));
                }
                Ctl::Drain(reply) => self.drained.push(reply),
                Ctl::Halt => break,
            }
            if self.cluster.in_flight() == 0 {
                for reply in self.drained.drain(..) {
                    let _ = reply.send(());
                }
            }
        }
    }
}

struct Ctx {
    tx: mpsc::Sender<Ctl>,
    timer: Timer,
    link: LinkModel,
    emulate_link: bool,
    deadline_ms: f64,
    grid: crate::domain::BucketGrid,
    seed: u64,
}

impl Ctx {
    async fn submit(&self, sub: Submission) -> Option<Completion> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Ctl::Submit { sub, reply }).ok()?;
        rx.await.ok()
    }

    async fn stats(&self) -> Option<(Counters, usize)> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Ctl::Stats(reply)).ok()?;
        rx.await.ok()
    }

    /// Return leg of the emulated link.
    async fn reply(&self, response: (u16, Vec<u8>), rng: &mut ChaCha8Rng) -> (u16, Vec<u8>) {
        self.link_delay(response.1.len(), rng).await;
        response
    }

    async fn link_delay(&self, bytes: usize, rng: &mut ChaCha8Rng) {
        if self.emulate_link {
            let d = self.link.sample_ns(bytes, rng);
            self.timer.sleep_until(Instant::now() + Duration::from_nanos(d)).await;
        }
    }
}

#[derive(Deserialize)]
struct WriteBody {
    key: ConfigKey,
    config: ChannelConfig,
}

fn json_error(code: u16, msg: impl std::fmt::Display) -> (u16, Vec<u8>) {
    (
        code,
        serde_json::to_vec(&serde_json::json!({ "error": msg.to_string() })).expect("error serializes"),
    )
}

fn invalid(e: &crate::domain::InvalidRequest) -> (u16, Vec<u8>) {
    (
        400,
        serde_json::to_vec(&serde_json::json!({
            "error": "invalid request",
            "fields": e.fields(),
            "detail": e.to_string(),
        }))
        .expect("error serializes"),
    )
}

const UNAVAILABLE: &str = "server shutting down";

async fn route(ctx: &Ctx, msg: &Message, client_id: u64, rng: &mut ChaCha8Rng, connections: u64) -> (u16, Vec<u8>) {
    let (method, target) = match msg.request_line() {
        Ok(x) => x,
        Err(e) => return json_error(400, e),
    };
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    match (method, path) {
        ("GET", "/healthz") => (200, b"ok".to_vec()),
        ("GET", "/stats") => match ctx.stats().await {
            Some((c, in_flight)) => (
                200,
                serde_json::to_vec(&ServerStats::new(c, in_flight, connections)).expect("stats serialize"),
            ),
            None => json_error(503, UNAVAILABLE),
        },
        ("GET", "/config") => {
            let Some(key) = query.split('&').find_map(|kv| kv.strip_prefix("key=")) else {
                return json_error(400, "missing key parameter");
            };
            let key = match decode_key(key) {
                Ok(k) => k,
                Err(e) => return json_error(400, e),
            };
            ctx.link_delay(msg.body.len(), rng).await;
            match ctx.submit(Submission::query(client_id, key, ctx.deadline_ms)).await {
                Some(c) => ctx.reply(render_response(Op::Read, &c), rng).await,
                None => json_error(503, UNAVAILABLE),
            }
        }
        ("POST", "/config") => {
            let body: WriteBody = match serde_json::from_slice(&msg.body) {
                Ok(b) => b,
                Err(e) => return json_error(400, e),
            };
            if let Err(e) = body.config.validate() {
                return invalid(&e);
            }
            ctx.link_delay(msg.body.len(), rng).await;
            match ctx
                .submit(Submission::update(client_id, body.key, body.config, ctx.deadline_ms))
                .await
            {
                Some(c) => ctx.reply(render_response(Op::Write, &c), rng).await,
                None => json_error(503, UNAVAILABLE),
            }
        }
        ("POST", "/request") => {
            let env: RequestEnvelope = match serde_json::from_slice(&msg.body) {
                Ok(b) => b,
                Err(e) => return json_error(400, e),
            };
            let mut env = match validate_request(env) {
                Ok(env) => env,
                Err(e) => return invalid(&e),
            };
            env.arrival_ts = now_unix_ns();
            ctx.link_delay(msg.body.len(), rng).await;
            match ctx.submit(Submission::from_envelope(&env, &ctx.grid)).await {
                Some(c) => ctx.reply(render_response(Op::Estimate, &c), rng).await,
                None => json_error(503, UNAVAILABLE),
            }
        }
        ("POST", "/admin/fail") => {
            let spec: FailureSpec = match serde_json::from_slice(&msg.body) {
                Ok(s) => s,
                Err(e) => return json_error(400, e),
            };
            let target = match spec {
                FailureSpec::Node(n) => FailureTarget::Node(n),
                FailureSpec::Instance(n) => FailureTarget::Instance(n),
            };
            let (reply, rx) = oneshot::channel();
            if ctx
                .tx
                .send(Ctl::Fail {
                    target,
                    reply: Some(reply),
                })
                .is_err()
            {
                return json_error(503, UNAVAILABLE);
            }
            match rx.await {
                Ok(Ok(())) => (200, br#"{"status":"ok"}"#.to_vec()),
                Ok(Err(e)) => json_error(404, e),
                Err(_) => json_error(503, UNAVAILABLE),
            }
        }
        (_, "/healthz" | "/stats" | "/config" | "/request" | "/admin/fail") => json_error(405, "method not allowed"),
        _ => (404, NOT_FOUND_BODY.to_vec()),
    }
}

async fn connection(
    socket: TcpStream,
    ctx: Arc<Ctx>,
    conn_id: u64,
    connections: Arc<AtomicU64>,
    mut shutdown: watch::Receiver<bool>,
) {
    let _ = socket.set_nodelay(true);
    let (rd, mut wr) = socket.into_split();
    let mut rd = BufReader::new(rd);
    let mut rng = stream(ctx.seed, StreamTag::Misc, conn_id);
    let mut out = Vec::new();
    let mut n: u64 = 0;
    loop {
        if *shutdown.borrow() {
            break;
        }
        let msg = tokio::select! {
            m = read_message(&mut rd) => m,
            _ = shutdown.changed() => break,
        };
        let msg = match msg {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(HttpError::Io(_) | HttpError::Truncated) => break,
            Err(e) => {
                let (code, body) = json_error(
                    if matches!(e, HttpError::BodyTooLarge(_)) {
                        413
                    } else {
                        400
                    },
                    &e,
                );
                out.clear();
                write_response(&mut out, code, &body, false);
                let _ = wr.write_all(&out).await;
                break;
            }
        };
        let keep_alive = msg.keep_alive();
        let client_id = (conn_id << 32) | n;
        n += 1;
        let (code, body) = route(&ctx, &msg, client_id, &mut rng, connections.load(Ordering::Relaxed)).await;
        out.clear();
        write_response(&mut out, code, &body, keep_alive);
        if wr.write_all(&out).await.is_err() || !keep_alive {
            break;
        }
    }
    let _ = wr.shutdown().await;
}

fn open_stores(scenario: &Scenario) -> Result<(Arc<ConfigStore>, Option<Arc<ConfigStore>>), StorageError> {
    let open = |path: &std::path::Path| -> Result<Arc<ConfigStore>, StorageError> {
        let (store, report) = ConfigStore::recover_with(path, scenario.store.durability)?;
        log::info!("{}: recovered {:?}", path.display(), report);
        Ok(Arc::new(store))
    };
    let store = match &scenario.store.path {
        Some(p) => open(p)?,
        None => Arc::new(ConfigStore::in_memory()),
    };
    let results = scenario.store.results_path.as_deref().map(open).transpose()?;
    Ok((store, results))
}

/// Serves `scenario` on `listener` until `shutdown` resolves, then stops
/// accepting, lets every open request finish, and returns the final counts.
pub async fn serve(
    scenario: &Scenario,
    listener: TcpListener,
    opts: ServeOptions,
    shutdown: impl Future<Output = ()>,
) -> Result<ServerStats, LiveError> {
    let (store, results) = open_stores(scenario)?;
    let workload =
        Workload::build(&scenario.workload, &scenario.estimator, &scenario.grid).map_err(LiveError::Workload)?;
    if scenario.workload.prime_store && store.stats().record_count == 0 {
        workload.prime(&store, now_unix_ns())?;
    }
    let mut cluster = Cluster::new(scenario.cluster_config(), store, results)?;
    let start = Instant::now();
    cluster.set_epoch_ns(now_unix_ns());

    let timer_thread = TimerThread::spawn();
    let (tx, rx) = mpsc::channel();
    let control = Control {
        cluster,
        timer: timer_thread.timer(),
        tx: tx.clone(),
        start,
        seed: opts.seed,
        service_time_ms: scenario.service_time_ms.iter().map(|(k, v)| (*k, *v)).collect(),
        instance_rng: HashMap::new(),
        waiting: HashMap::new(),
        tick: (scenario.mode == Mode::KubeStyle)
            .then(|| Duration::from_nanos(ms_to_ns(scenario.autoscaler.tick_ms).max(1))),
        drained: Vec::new(),
    };
    for f in &scenario.failures {
        let target = match &f.target {
            FailureSpec::Node(n) => FailureTarget::Node(n.clone()),
            FailureSpec::Instance(n) => FailureTarget::Instance(n.clone()),
        };
        control.send_at(
            start + Duration::from_nanos(ms_to_ns(f.at_s * 1e3)),
            Ctl::Fail { target, reply: None },
        );
    }
    let control_thread = std::thread::Builder::new()
        .name("offload-control".into())
        .spawn(move || control.run(rx))
        .expect("spawn control thread");

    let ctx = Arc::new(Ctx {
        tx: tx.clone(),
        timer: timer_thread.timer(),
        link: scenario.link,
        emulate_link: opts.emulate_link,
        deadline_ms: scenario.workload.deadline_ms,
        grid: scenario.grid,
        seed: opts.seed,
    });
    let (stop_tx, stop_rx) = watch::channel(false);
    let connections = Arc::new(AtomicU64::new(0));
    let mut tasks = JoinSet::new();
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => match accepted {
                Ok((socket, _)) => {
                    let id = connections.fetch_add(1, Ordering::Relaxed);
                    tasks.spawn(connection(socket, ctx.clone(), id, connections.clone(), stop_rx.clone()));
                }
                Err(e) => log::warn!("accept: {e}"),
            },
            Some(_) = tasks.join_next(), if !tasks.is_empty() => {}
        }
    }
    drop(listener);
    log::info!("shutting down, {} connections open", tasks.len());
    let _ = stop_tx.send(true);
    let deadline = tokio::time::Instant::now() + opts.drain_timeout;
    let drained = tokio::time::timeout_at(deadline, async {
        while tasks.join_next().await.is_some() {}
        let (reply, rx) = oneshot::channel();
        if tx.send(Ctl::Drain(reply)).is_ok() {
            let _ = rx.await;
        }
    })
    .await;
    if drained.is_err() {
        log::warn!("drain timed out, aborting {} connections", tasks.len());
        tasks.abort_all();
    }
    let stats = ctx
        .stats()
        .await
        .map(|(c, f)| ServerStats::new(c, f, connections.load(Ordering::Relaxed)));
    let _ = tx.send(Ctl::Halt);
    drop(ctx);
    let _ = tokio::task::spawn_blocking(move || control_thread.join()).await;
    drop(timer_thread);
    Ok(stats.expect("control thread answers until halted"))
}
