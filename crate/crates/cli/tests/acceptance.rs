//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p offload-bench --test acceptance -- 4 6` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use offload_core::domain::{BucketGrid, ChannelState, DataType, Modulation, QosRequirements};
use offload_core::estimator::{ber_of, select_modulation, snr_db, LinkBudgetParams};
use offload_core::loadgen::{run_level, run_sweep, LevelRange, LiveTarget, Op, SweepConfig, Target, Workload};
use offload_core::metrics::{aggregate, finite_population_oracle, throughput, SweepReport, DEFAULT_KNEE_ALPHA};
use offload_core::orchestration::Mode;
use offload_core::placement::{place_ffd, place_optimal_bruteforce, NodeCapacity, ServiceInstanceSpec, ServiceKind};
use offload_core::runtime::live::ServerStats;
use offload_core::runtime::rng::{stream, StreamTag};
use offload_core::runtime::scenario::{load_scenario, load_scenarios, FailureSpec, ScheduledFailure, Site};
use offload_core::runtime::sim::{run_simulation, SimOptions};
use offload_core::store::{serialize_line, ConfigStore, StoreRecord};
use rand::Rng;

type Check = fn() -> Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config(name: &str) -> PathBuf {
    root().join("configs").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn queueing_oracle() -> Result<String, String> {
    let base = load_scenario(config("oracle.json")).map_err(|e| e.to_string())?;
    let s_ms = base.service_time(ServiceKind::Read).mean();
    let z_ms = base.workload.think_ms.mean();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for n in [1, 4, 16, 64] {
        for c in [1, 2, 4] {
            let mut s = base.clone();
            s.concurrency.insert(ServiceKind::Read, c);
            let out = run_simulation(
                &s,
                &SimOptions {
                    users: n,
                    warmup_s: s.sweep.warmup_s,
                    measure_s: s.sweep.measure_s,
                    seed: s.seed.unwrap_or(1),
                    trace: false,
                },
            )
            .map_err(|e| e.to_string())?;
            let sim = throughput(&out.record).rps;
            let oracle = finite_population_oracle(n, c, s_ms, z_ms);
            let rel = (sim - oracle).abs() / oracle;
            worst = worst.max(rel);
            if rel > 0.05 {
                failures.push(format!("n={n} c={c}: sim {sim:.2} vs oracle {oracle:.2} rps"));
            }
        }
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(format!("12 (n, c) points, worst relative error {:.2}%", worst * 100.0))
}

fn bin_packing() -> Result<String, String> {
    let template = NodeCapacity::empty("node", 4000, 8192);
    let mut rng = stream(2, StreamTag::Misc, 0);
    let (mut equal, mut worst_gap) = (0, 0usize);
    for trial in 0..1000 {
        let n = rng.random_range(1..=8);
        let items: Vec<ServiceInstanceSpec> = (0..n)
            .map(|_| ServiceInstanceSpec {
                service_kind: ServiceKind::ALL[rng.random_range(0..ServiceKind::ALL.len())],
                cpu_millicores: rng.random_range(50..=4000),
                mem_mb: rng.random_range(64..=8192),
            })
            .collect();
        let ffd = place_ffd(&items, &template).map_err(|e| e.to_string())?;
        let opt = place_optimal_bruteforce(&items, &template).map_err(|e| e.to_string())?;
        let (f, o) = (ffd.len(), opt.len());
        ensure(ffd.iter().all(NodeCapacity::is_feasible), || {
            format!("trial {trial}: infeasible FFD")
        })?;
        ensure(f >= o, || format!("trial {trial}: FFD {f} beats optimum {o}"))?;
        ensure(f as f64 <= 11.0 / 9.0 * o as f64 + 1.0, || {
            format!("trial {trial}: FFD {f} exceeds 11/9 * {o} + 1")
        })?;
        equal += usize::from(f == o);
        worst_gap = worst_gap.max(f - o);
    }
    ensure(equal >= 950, || format!("FFD optimal on {equal}/1000, need >= 950"))?;
    Ok(format!("FFD optimal on {equal}/1000, worst excess {worst_gap} node(s)"))
}

fn estimator() -> Result<String, String> {
    let path = root().join("crates/core/tests/data/ber_oracle.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for row in table["grid"].as_array().ok_or("oracle grid missing")? {
        let gamma = row["gamma"].as_f64().ok_or("gamma missing")?;
        for (name, m) in [
            ("bpsk", Modulation::Bpsk),
            ("qpsk", Modulation::Qpsk),
            ("qam16", Modulation::Qam16),
            ("qam64", Modulation::Qam64),
        ] {
            let want = row[name].as_f64().ok_or("oracle value missing")?;
            let got = ber_of(m, 10.0 * gamma.log10());
            worst = worst.max((got - want).abs());
            points += 1;
        }
    }
    ensure(worst <= 1e-12, || format!("worst absolute BER error {worst:e}"))?;

    let params = LinkBudgetParams::default();
    let mut rng = stream(3, StreamTag::Misc, 0);
    for i in 0..10_000 {
        let m = Modulation::ALL[rng.random_range(0..Modulation::ALL.len())];
        let a = rng.random_range(-20.0..40.0);
        let d = rng.random_range(0.01..5.0);
        let (lo, hi) = (ber_of(m, a + d), ber_of(m, a));
        ensure(if lo > f64::MIN_POSITIVE { lo < hi } else { lo <= hi }, || {
            format!("draw {i}: BER {m:?} not decreasing between {a} and {} dB", a + d)
        })?;

        let qos = QosRequirements {
            bitrate_bps: 1e9,
            ber_max: 10f64.powf(-rng.random_range(2.0..9.0)),
            bandwidth_hz: 10f64.powf(rng.random_range(8.0..11.0)),
            data_type: DataType::Bulk,
            deadline_ms: 100.0,
        };
        let state = ChannelState {
            frequency_hz: rng.random_range(100e9..1000e9),
            distance_m: rng.random_range(0.1..50.0),
            humidity_pct: rng.random_range(0.0..100.0),
            temperature_c: rng.random_range(-10.0..40.0),
            measured_snr_db: None,
        };
        let far = ChannelState {
            distance_m: state.distance_m + rng.random_range(0.01..20.0),
            ..state
        };
        let (near_snr, far_snr) = (snr_db(&qos, &state, &params), snr_db(&qos, &far, &params));
        ensure(far_snr < near_snr, || {
            format!("draw {i}: SNR not decreasing in distance")
        })?;
        let order = |snr| select_modulation(snr, qos.ber_max).map_or(0, Modulation::order);
        ensure(order(far_snr) <= order(near_snr), || {
            format!("draw {i}: modulation order increased with distance")
        })?;
    }
    Ok(format!(
        "{points} oracle points, worst |error| {worst:.1e}; 3 monotonicity suites x 10^4 draws"
    ))
}

fn trends() -> Result<String, String> {
    let scenarios = load_scenarios(config("paper-analogue.json")).map_err(|e| e.to_string())?;
    let mut reports: BTreeMap<(Mode, Site, Op), SweepReport> = BTreeMap::new();
    for s in &scenarios {
        for op in [Op::Read, Op::Write] {
            let mut s = s.clone();
            s.workload = s.workload.only(op);
            let target = Target::Sim {
                scenario: &s,
                seed: s.seed.unwrap_or(1),
            };
            let (report, err) = run_sweep(&s.sweep, &target, DEFAULT_KNEE_ALPHA, &mut Vec::new());
            if let Some(e) = err {
                return Err(format!("{}: {e}", s.name));
            }
            reports.insert((s.mode, s.site, op), report);
        }
    }
    let knee = |mode, site| {
        reports
            .get(&(mode, site, Op::Read))
            .and_then(|r| r.knee_users)
            .ok_or_else(|| format!("no read knee for {mode} {site}"))
    };
    let mut problems = Vec::new();

    // (a)
    let mono = knee(Mode::Monolithic, Site::Cloud)?;
    if !(400..=600).contains(&mono) {
        problems.push(format!("(a) knee(mono, cloud) = {mono}"));
    }
    let mut micro = Vec::new();
    for mode in [Mode::SwarmStyle, Mode::KubeStyle] {
        for site in [Site::Edge, Site::Cloud] {
            let k = knee(mode, site)?;
            micro.push(format!("{mode}/{site} {k}"));
            if !(800..=1000).contains(&k) {
                problems.push(format!("(a) knee({mode}, {site}) = {k}"));
            }
            let ratio = f64::from(k) / f64::from(mono);
            if (ratio / 1.8 - 1.0).abs() > 0.2 {
                problems.push(format!("(a) ratio {mode}/{site} = {ratio:.2}"));
            }
        }
    }

    // (b)
    for ((mode, site, op), r) in &reports {
        if *op != Op::Read {
            continue;
        }
        let w = &reports[&(*mode, *site, Op::Write)];
        for (a, b) in r.rows.iter().zip(&w.rows) {
            if !(b.mean_ms > a.mean_ms) {
                problems.push(format!(
                    "(b) {mode} {site} users={}: write {:.1} <= read {:.1}",
                    a.users, b.mean_ms, a.mean_ms
                ));
            }
        }
    }

    // (c)
    for mode in [Mode::SwarmStyle, Mode::KubeStyle] {
        let below = knee(mode, Site::Edge)?.min(knee(mode, Site::Cloud)?);
        let e = &reports[&(mode, Site::Edge, Op::Read)];
        let c = &reports[&(mode, Site::Cloud, Op::Read)];
        for (a, b) in e.rows.iter().zip(&c.rows).filter(|(a, _)| a.users < below) {
            if !(a.mean_ms < b.mean_ms) {
                problems.push(format!(
                    "(c) {mode} users={}: edge {:.1} >= cloud {:.1}",
                    a.users, a.mean_ms, b.mean_ms
                ));
            }
        }
    }

    // (d)
    let mut max_gain: f64 = 0.0;
    for ((mode, site, op), r) in &reports {
        let Some(k) = r.knee_users else { continue };
        for w in r.rows.windows(2).filter(|w| w[0].users >= k) {
            let gain = w[1].rps / w[0].rps - 1.0;
            max_gain = max_gain.max(gain);
            if gain >= 0.02 {
                problems.push(format!(
                    "(d) {mode} {site} {op} {}->{}: +{:.2}%",
                    w[0].users,
                    w[1].users,
                    gain * 100.0
                ));
            }
        }
    }
    ensure(problems.is_empty(), || problems.join("; "))?;
    Ok(format!(
        "knee mono/cloud {mono}, {}; max throughput gain above knee {:.2}%",
        micro.join(", "),
        max_gain * 100.0
    ))
}

fn failure_isolation() -> Result<String, String> {
    let sim = |path: &str, op: Op, target: FailureSpec, at_s: f64| {
        let mut s = load_scenario(config(path)).map_err(|e| e.to_string())?;
        s.workload = s.workload.only(op);
        s.failures = vec![ScheduledFailure { at_s, target }];
        run_simulation(
            &s,
            &SimOptions {
                users: 20,
                warmup_s: 0.5,
                measure_s: 3.0,
                seed: 5,
                trace: false,
            },
        )
        .map_err(|e| e.to_string())
    };
    let write_kill = || FailureSpec::Instance("write-0".into());

    let reads = sim("edge-swarm.json", Op::Read, write_kill(), 1.0)?;
    let c = reads.counters;
    ensure(
        c.submitted > 0 && c.ok == c.submitted && c.completed() == c.submitted,
        || format!("swarm reads after write kill: {c:?}"),
    )?;
    ensure(reads.record.errors() == 0 && reads.record.ok > 0, || {
        format!(
            "swarm read samples: ok {} errors {}",
            reads.record.ok,
            reads.record.errors()
        )
    })?;

    let writes = sim("edge-swarm.json", Op::Write, write_kill(), 0.0)?;
    let w = writes.counters;
    ensure(w.submitted > 0 && w.failed == w.submitted && w.ok == 0, || {
        format!("swarm writes after write kill: {w:?}")
    })?;
    ensure(writes.record.failed == writes.record.responses(), || {
        "write samples not all Failed".into()
    })?;

    let mut mono = Vec::new();
    for op in Op::ALL {
        let out = sim("edge-mono.json", op, FailureSpec::Node("mono-0".into()), 0.0)?;
        let m = out.counters;
        ensure(m.submitted > 0 && m.failed == m.submitted, || {
            format!("mono {op} after node kill: {m:?}")
        })?;
        mono.push(format!("{op} {}/{}", m.failed, m.submitted));
    }
    Ok(format!(
        "swarm write kill: reads {}/{} ok, writes {}/{} failed; mono node kill failed: {}",
        c.ok,
        c.submitted,
        w.failed,
        w.submitted,
        mono.join(", ")
    ))
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http_get(addr: &str, path: &str) -> Result<String, String> {
    let mut s = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    s.set_read_timeout(Some(Duration::from_secs(10)))
        .map_err(|e| e.to_string())?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").map_err(|e| e.to_string())?;
    let mut text = String::new();
    s.read_to_string(&mut text).map_err(|e| e.to_string())?;
    text.split_once("\r\n\r\n")
        .map(|(_, body)| body.to_string())
        .ok_or_else(|| format!("bad response {text:?}"))
}

fn live_soak() -> Result<String, String> {
    let scenario_path = config("edge-swarm.json");
    let child = Command::new(env!("CARGO_BIN_EXE_offload-bench"))
        .args(["serve", "--bind", "127.0.0.1:0", "--scenario"])
        .arg(&scenario_path)
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut server = Server(child);
    let mut first = String::new();
    let mut out = BufReader::new(server.0.stdout.take().ok_or("no stdout")?);
    out.read_line(&mut first).map_err(|e| e.to_string())?;
    let drain = std::thread::spawn(move || {
        let mut rest = String::new();
        let _ = out.read_to_string(&mut rest);
        rest
    });
    let url = first
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected banner {first:?}"))?
        .to_string();
    let addr = url.trim_start_matches("http://").to_string();

    let s = load_scenario(&scenario_path).map_err(|e| e.to_string())?;
    let workload =
        Workload::build(&s.workload.only(Op::Read), &s.estimator, &BucketGrid::default()).map_err(|e| e.to_string())?;
    let target = LiveTarget::from_url(&url, workload, 7).map_err(|e| e.to_string())?;
    let sweep = SweepConfig {
        users: LevelRange {
            start: 1300,
            end: 1300,
            step: 1,
        },
        warmup_s: 2.0,
        measure_s: 10.0,
    };
    let record = run_level(1300, &sweep, &Target::Live(&target)).map_err(|e| e.to_string())?;
    let row = aggregate(&record);
    let stats: ServerStats = serde_json::from_str(&http_get(&addr, "/stats")?).map_err(|e| format!("stats: {e}"))?;

    unsafe {
        libc::kill(server.0.id() as libc::pid_t, libc::SIGINT);
    }
    let deadline = Instant::now() + Duration::from_secs(20);
    let status = loop {
        if let Some(st) = server.0.try_wait().map_err(|e| e.to_string())? {
            break st;
        }
        if Instant::now() > deadline {
            return Err("server did not exit after SIGINT".into());
        }
        std::thread::sleep(Duration::from_millis(20));
    };

    let final_stats = drain.join().unwrap_or_default();
    ensure(record.transport_errors == 0, || {
        format!("{} connection errors", record.transport_errors)
    })?;
    ensure(record.ok > 0 && record.errors() == 0, || {
        format!("ok {} errors {}", record.ok, record.errors())
    })?;
    ensure(stats.conserved() && stats.in_flight == 0, || {
        format!("not conserved: {stats:?}")
    })?;
    ensure(stats.submitted >= record.responses(), || {
        "server saw fewer requests than answered".into()
    })?;
    ensure(row.p99_ms.is_finite(), || "p99 not finite".into())?;
    ensure(status.success(), || format!("serve exited with {status}"))?;
    ensure(final_stats.contains("in_flight"), || {
        format!("no final stats printed: {final_stats:?}")
    })?;
    Ok(format!(
        "1300 users: {} ok in window, 0 connection errors, p99 {:.1} ms, {} rps; server submitted {} = completed + 0 in flight; SIGINT exit 0",
        record.ok, row.p99_ms, row.rps, stats.submitted
    ))
}

fn determinism() -> Result<String, String> {
    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |dir: &Path| -> Result<Vec<u8>, String> {
        let st = Command::new(env!("CARGO_BIN_EXE_offload-bench"))
            .args([
                "bench", "--users", "10:90:40", "--op", "read", "--seed", "42", "--warmup", "0.5",
            ])
            .args(["--measure", "2", "--sim"])
            .arg(config("edge-swarm.json"))
            .arg("--out")
            .arg(dir)
            .stdout(Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        ensure(st.success(), || format!("bench exited with {st}"))?;
        fs::read(dir.join("swarm_style_edge_read.csv")).map_err(|e| e.to_string())
    };
    let a = run(&out.path().join("a"))?;
    let b = run(&out.path().join("b"))?;
    ensure(a == b, || "two runs with the same seed differ".into())?;
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_swarm_edge_read.csv");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&golden_path, &a).map_err(|e| e.to_string())?;
    }
    let golden = fs::read(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?;
    ensure(a == golden, || {
        format!(
            "output differs from {}:\n{}",
            golden_path.display(),
            String::from_utf8_lossy(&a)
        )
    })?;
    Ok(format!(
        "{} bytes, identical across runs and to the golden file",
        a.len()
    ))
}

fn durability() -> Result<String, String> {
    const WRITES: u64 = 10_000;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spawn = |path: &Path| {
        Command::new(env!("CARGO_BIN_EXE_offload-bench"))
            .args(["store-torture", "--writes", &WRITES.to_string(), "--path"])
            .arg(path)
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| e.to_string())
    };
    let acked_lines = |child: &mut Child| -> Result<Vec<u64>, String> {
        let mut text = String::new();
        child
            .stdout
            .take()
            .ok_or("no stdout")?
            .read_to_string(&mut text)
            .map_err(|e| e.to_string())?;
        // a final line without its newline was never fully acknowledged
        let complete = &text[..text.rfind('\n').map_or(0, |i| i + 1)];
        complete
            .lines()
            .map(|l| l.parse().map_err(|e| format!("{l:?}: {e}")))
            .collect()
    };

    // uninterrupted run to size the kill window
    let full_path = dir.path().join("full.log");
    let started = Instant::now();
    let mut child = spawn(&full_path)?;
    let acked = acked_lines(&mut child)?;
    child.wait().map_err(|e| e.to_string())?;
    let full_run = started.elapsed();
    ensure(acked.len() as u64 == WRITES, || {
        format!("uninterrupted run acked {}", acked.len())
    })?;

    let mut rng = stream(8, StreamTag::Misc, 0);
    let mut mid_run = 0;
    let mut torn = 0;
    let mut total_acked = 0;
    for trial in 0..20 {
        let path = dir.path().join(format!("trial-{trial}.log"));
        let mut child = spawn(&path)?;
        let wait = full_run.mul_f64(rng.random_range(0.05..0.9));
        std::thread::sleep(wait);
        let _ = child.kill();
        let acked = acked_lines(&mut child)?;
        let status = child.wait().map_err(|e| e.to_string())?;
        if !status.success() {
            mid_run += 1;
        }
        if trial % 2 == 1 {
            let line = serialize_line(&StoreRecord {
                key: offload_core::domain::ConfigKey([99_999, 0, 0, 0, 0, 0, 0]),
                config: offload_core::domain::ChannelConfig {
                    modulation: Modulation::Qpsk,
                    code_rate: 0.5,
                    bandwidth_hz: 1e10,
                    tx_power_dbm: 10.0,
                    predicted_snr_db: 1.0,
                    predicted_ber: 1e-6,
                },
                version: 1,
                written_ts: 1,
            });
            let cut = rng.random_range(1..line.len() - 1);
            let mut f = fs::OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(|e| e.to_string())?;
            f.write_all(&line.as_bytes()[..cut]).map_err(|e| e.to_string())?;
        }
        let raw = fs::read(&path).map_err(|e| e.to_string())?;
        let tail_torn = raw.last().is_some_and(|&b| b != b'\n');
        torn += usize::from(tail_torn);

        let (store, report) = ConfigStore::recover(&path).map_err(|e| format!("trial {trial}: {e}"))?;
        for &i in &acked {
            let key = offload_core::domain::ConfigKey([i as i64, 0, 0, 0, 0, 0, 0]);
            let rec = store
                .read(&key)
                .ok_or_else(|| format!("trial {trial}: acked write {i} lost"))?;
            ensure(rec.config.predicted_snr_db == i as f64 * 1e-3, || {
                format!("trial {trial}: write {i} corrupted")
            })?;
        }
        ensure(tail_torn == !report.warnings.is_empty(), || {
            format!(
                "trial {trial}: torn tail {tail_torn} but warnings {:?}",
                report.warnings
            )
        })?;
        ensure(
            store
                .read(&offload_core::domain::ConfigKey([99_999, 0, 0, 0, 0, 0, 0]))
                .is_none(),
            || format!("trial {trial}: torn record surfaced"),
        )?;
        let kept = store.stats().record_count;
        drop(store);
        let after = fs::read(&path).map_err(|e| e.to_string())?;
        ensure(after.last().is_none_or(|&b| b == b'\n'), || {
            format!("trial {trial}: tail not truncated")
        })?;
        let (again, report) = ConfigStore::recover(&path).map_err(|e| e.to_string())?;
        ensure(report.warnings.is_empty() && again.stats().record_count == kept, || {
            format!("trial {trial}: second recovery differs")
        })?;
        total_acked += acked.len();
    }
    Ok(format!(
        "20 trials, {mid_run} killed mid-run, {torn} torn tails discarded, {total_acked} acked writes all recovered"
    ))
}

fn main() -> ExitCode {
    // (criterion, name, check, runtime limit in seconds)
    let checks: [(u8, &str, Check, f64); 8] = [
        (1, "queueing oracle", queueing_oracle, 60.0),
        (2, "bin-packing optimality", bin_packing, 30.0),
        (3, "estimator oracle", estimator, f64::INFINITY),
        (4, "trend reproduction", trends, 300.0),
        (5, "failure isolation", failure_isolation, f64::INFINITY),
        (6, "live soak", live_soak, 60.0),
        (7, "determinism", determinism, f64::INFINITY),
        (8, "store durability", durability, f64::INFINITY),
    ];
    let wanted: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check, limit) in checks {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        let result = result.and_then(|d| {
            ensure(secs < limit, || format!("took {secs:.1} s, limit {limit} s; {d}"))?;
            Ok(d)
        });
        match result {
            Ok(detail) => println!("criterion {n} PASS {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
