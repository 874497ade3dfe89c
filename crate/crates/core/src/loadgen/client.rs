//! Closed-loop users over real sockets, one keep-alive connection each.

use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::task::JoinSet;
use tokio::time::Instant;

use super::{LoadgenError, Op, Workload};
use crate::domain::Status;
use crate::metrics::MetricsRecord;
use crate::runtime::live::http::{read_message, write_request};
use crate::runtime::rng::{stream, StreamTag};
use crate::runtime::wire::encode_key;
use crate::store::StoreRecord;

pub struct LiveTarget {
    pub addr: SocketAddr,
    pub workload: Arc<Workload>,
    pub mode_label: String,
    pub site_label: String,
    pub seed: u64,
    pub connect_timeout: Duration,
}

impl LiveTarget {
    /// `url` is `http://host:port` with an optional trailing slash.
    pub fn from_url(url: &str, workload: Workload, seed: u64) -> Result<Self, LoadgenError> {
        let hostport = url
            .strip_prefix("http://")
            .ok_or_else(|| LoadgenError::TargetUnreachable(format!("{url}: only http:// URLs are supported")))?
            .trim_end_matches('/');
        let addr = hostport
            .to_socket_addrs()
            .map_err(|e| LoadgenError::TargetUnreachable(format!("{url}: {e}")))?
            .next()
            .ok_or_else(|| LoadgenError::TargetUnreachable(format!("{url}: no address")))?;
        Ok(Self {
            addr,
            workload: Arc::new(workload),
            mode_label: "live".into(),
            site_label: hostport.to_string(),
            seed,
            connect_timeout: Duration::from_secs(5),
        })
    }
}

/// The request status a response code stands for.
pub fn status_of(code: u16) -> Status {
    match code {
        200..=299 | 404 => Status::Ok,
        504 => Status::Timeout,
        429 => Status::Rejected,
        _ => Status::Failed,
    }
}

struct Conn {
    rd: BufReader<OwnedReadHalf>,
    wr: OwnedWriteHalf,
}

async fn connect(addr: SocketAddr, timeout: Duration) -> std::io::Result<Conn> {
    let socket = tokio::time::timeout(timeout, TcpStream::connect(addr))
        .await
        .map_err(|_| std::io::Error::new(std::io::ErrorKind::TimedOut, "connect timed out"))??;
    socket.set_nodelay(true)?;
    let (rd, wr) = socket.into_split();
    Ok(Conn {
        rd: BufReader::new(rd),
        wr,
    })
}

fn request_bytes(workload: &Workload, op: Op, profile: usize, client_id: u64, out: &mut Vec<u8>) {
    out.clear();
    let p = &workload.profiles[profile];
    match op {
        Op::Read => write_request(out, "GET", &format!("/config?key={}", encode_key(&p.key)), b""),
        Op::Write => {
            let body = serde_json::to_vec(&StoreRecord {
                key: p.key,
                config: p.config,
                version: 0,
                written_ts: 0,
            })
            .expect("record serializes");
            write_request(out, "POST", "/config", &body);
        }
        Op::Estimate => {
            let body = serde_json::to_vec(&workload.envelope(profile, client_id)).expect("envelope serializes");
            write_request(out, "POST", "/request", &body);
        }
    }
}

async fn exchange(conn: &mut Conn, req: &[u8]) -> Result<(u16, usize), String> {
    conn.wr.write_all(req).await.map_err(|e| e.to_string())?;
    let msg = read_message(&mut conn.rd)
        .await
        .map_err(|e| e.to_string())?
        .ok_or("connection closed")?;
    let code = msg.status_code().map_err(|e| e.to_string())?;
    if !msg.keep_alive() {
        return Err(format!("server closed the connection after {code}"));
    }
    Ok((code, msg.body.len()))
}

async fn user(
    target: Arc<(SocketAddr, Duration, Arc<Workload>)>,
    index: u32,
    seed: u64,
    window: (Instant, Instant),
    mut record: MetricsRecord,
    first: Conn,
) -> MetricsRecord {
    let (addr, timeout, workload) = &*target;
    let mut rng = stream(seed, StreamTag::User, u64::from(index));
    let mut conn = Some(first);
    let mut buf = Vec::new();
    let mut sent: u64 = 0;
    let (start, end) = window;
    while Instant::now() < end {
        let c = match conn.as_mut() {
            Some(c) => c,
            None => match connect(*addr, *timeout).await {
                Ok(c) => conn.insert(c),
                Err(e) => {
                    log::warn!("user {index}: reconnect: {e}");
                    if Instant::now() >= start {
                        record.transport_errors += 1;
                    }
                    tokio::time::sleep(Duration::from_millis(50)).await;
                    continue;
                }
            },
        };
        let client_id = (u64::from(index) << 32) | sent;
        sent += 1;
        let draw = workload.draw(&mut rng, client_id);
        request_bytes(workload, draw.op, draw.profile, client_id, &mut buf);
        let issued = Instant::now();
        let result = exchange(c, &buf).await;
        let done = Instant::now();
        let in_window = done >= start && done < end;
        match result {
            Ok((code, bytes)) => {
                if in_window {
                    let ms = (done - issued).as_nanos() as f64 / 1e6;
                    record.observe(status_of(code), ms, bytes as u64);
                }
            }
            Err(e) => {
                log::warn!("user {index}: {e}");
                conn = None;
                if in_window {
                    record.transport_errors += 1;
                }
            }
        }
        let think = workload.config.think_ms.sample_ms(&mut rng);
        if think > 0.0 {
            tokio::time::sleep(Duration::from_secs_f64(think / 1e3)).await;
        }
    }
    record
}

/// Runs `users` closed-loop users against a live server for warmup plus
/// measure seconds. Every user connects before the clock starts.
pub async fn run_live_level(
    target: &LiveTarget,
    users: u32,
    warmup_s: f64,
    measure_s: f64,
) -> Result<MetricsRecord, LoadgenError> {
    let label = target.workload.config.label();
    let blank = MetricsRecord::new(&target.mode_label, &target.site_label, label, users, measure_s);
    let probe = connect(target.addr, target.connect_timeout)
        .await
        .map_err(|e| LoadgenError::TargetUnreachable(format!("{}: {e}", target.addr)))?;
    drop(probe);

    let mut conns = Vec::with_capacity(users as usize);
    let mut failed_connects = 0u64;
    for _ in 0..users {
        match connect(target.addr, target.connect_timeout).await {
            Ok(c) => conns.push(Some(c)),
            Err(e) => {
                log::warn!("connect: {e}");
                failed_connects += 1;
                conns.push(None);
            }
        }
    }
    let start = Instant::now() + Duration::from_secs_f64(warmup_s);
    let end = start + Duration::from_secs_f64(measure_s);
    let shared = Arc::new((target.addr, target.connect_timeout, target.workload.clone()));
    let mut set = JoinSet::new();
    let mut late = Vec::new();
    for (i, c) in conns.into_iter().enumerate() {
        match c {
            Some(c) => {
                set.spawn(user(
                    shared.clone(),
                    i as u32,
                    target.seed,
                    (start, end),
                    blank.clone(),
                    c,
                ));
            }
            None => late.push(i as u32),
        }
    }
    for i in late {
        let shared = shared.clone();
        let rec = blank.clone();
        let seed = target.seed;
        set.spawn(async move {
            match connect(shared.0, shared.1).await {
                Ok(c) => user(shared, i, seed, (start, end), rec, c).await,
                Err(_) => rec,
            }
        });
    }
    let mut total = blank;
    total.transport_errors += failed_connects;
    while let Some(r) = set.join_next().await {
        match r {
            Ok(rec) => total.merge(&rec),
            Err(e) => {
                log::error!("user task: {e}");
                total.transport_errors += 1;
            }
        }
    }
    Ok(total)
}
