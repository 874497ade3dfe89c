use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use offload_core::domain::{ChannelConfig, ConfigKey, Modulation};
use offload_core::loadgen::{run_sweep, LevelRange, LiveTarget, LoadgenError, Op, Target, Workload};
use offload_core::metrics::{emit_svg, knee_detect, parse_csv, Curve, SummaryRow, SweepReport, DEFAULT_KNEE_ALPHA};
use offload_core::runtime::live::{bind, serve, ServeOptions};
use offload_core::runtime::scenario::{load_scenarios, ConfigError, Scenario};
use offload_core::runtime::sim::SimError;
use offload_core::store::{compact, ConfigStore, Durability};

#[derive(Parser)]
#[command(
    name = "offload-bench",
    version,
    about = "Edge/cloud offloading control plane and benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve a scenario over HTTP until interrupted.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Answer without the scenario's emulated link delays.
        #[arg(long)]
        no_link_emulation: bool,
    },
    /// Sweep concurrency levels against a simulated or live target.
    Bench {
        /// Scenario (or scenario set) to simulate.
        #[arg(long, conflicts_with = "url", required_unless_present = "url")]
        sim: Option<PathBuf>,
        /// Live server, e.g. http://127.0.0.1:8080.
        #[arg(long)]
        url: Option<String>,
        /// Workload and sweep settings for a live target.
        #[arg(long, requires = "url")]
        scenario: Option<PathBuf>,
        /// start:end:step
        #[arg(long)]
        users: Option<LevelRange>,
        #[arg(long)]
        op: Option<Op>,
        #[arg(long, env = "OFFLOAD_BENCH_OUT", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        warmup: Option<f64>,
        #[arg(long)]
        measure: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_KNEE_ALPHA)]
        alpha: f64,
    },
    /// Overlay sweep CSVs in one SVG and tabulate knees.
    Compare {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        /// SVG to write; defaults to compare.svg in the output directory.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, env = "OFFLOAD_BENCH_OUT", default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_KNEE_ALPHA)]
        alpha: f64,
    },
    /// Rewrite a store log keeping only the latest version of each key.
    Compact { path: PathBuf },
    #[command(hide = true)]
    StoreTorture {
        #[arg(long)]
        path: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        writes: u64,
    },
}

enum Failure {
    Config(String),
    Target(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<LoadgenError> for Failure {
    fn from(e: LoadgenError) -> Self {
        match e {
            LoadgenError::Sim(SimError::Cluster(_) | SimError::Workload(_)) => Failure::Config(e.to_string()),
            _ => Failure::Target(e.to_string()),
        }
    }
}

fn io_target(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Target(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Serve {
            scenario,
            bind,
            seed,
            no_link_emulation,
        } => cmd_serve(&scenario, bind, seed, !no_link_emulation),
        Cmd::Bench {
            sim,
            url,
            scenario,
            users,
            op,
            out,
            seed,
            warmup,
            measure,
            alpha,
        } => {
            let opts = BenchOpts {
                users,
                op,
                out,
                seed,
                warmup,
                measure,
                alpha,
            };
            match (sim, url) {
                (Some(path), _) => cmd_bench_sim(&path, &opts),
                (None, Some(url)) => cmd_bench_live(&url, scenario.as_deref(), &opts),
                (None, None) => Err(Failure::Config("one of --sim or --url is required".into())),
            }
        }
        Cmd::Compare { csvs, svg, out, alpha } => {
            cmd_compare(&csvs, svg.unwrap_or_else(|| out.join("compare.svg")), alpha)
        }
        Cmd::Compact { path } => compact(&path)
            .map(|r| println!("{}: {} entries kept", path.display(), r.entries))
            .map_err(|e| Failure::Target(e.to_string())),
        Cmd::StoreTorture { path, writes } => store_torture(&path, writes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Target(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn single_scenario(path: &Path) -> Result<Scenario, Failure> {
    let mut all = load_scenarios(path)?;
    if all.len() != 1 {
        return Err(Failure::Config(format!(
            "{}: expected one scenario, found {}",
            path.display(),
            all.len()
        )));
    }
    Ok(all.remove(0))
}

fn cmd_serve(path: &Path, addr: SocketAddr, seed: u64, emulate_link: bool) -> Result<(), Failure> {
    let scenario = single_scenario(path)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Target(e.to_string()))?;
    rt.block_on(async {
        let listener = bind(addr).map_err(|e| Failure::Target(e.to_string()))?;
        let local = listener.local_addr().map_err(|e| Failure::Target(e.to_string()))?;
        println!("listening on http://{local}");
        let opts = ServeOptions {
            seed,
            emulate_link,
            ..ServeOptions::default()
        };
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("interrupt received, draining");
        };
        let stats = serve(&scenario, listener, opts, shutdown).await.map_err(|e| match e {
            offload_core::runtime::live::LiveError::Bind { .. } => Failure::Target(e.to_string()),
            _ => Failure::Config(e.to_string()),
        })?;
        println!(
            "submitted={} ok={} timeout={} rejected={} failed={} in_flight={} connections={}",
            stats.submitted, stats.ok, stats.timeout, stats.rejected, stats.failed, stats.in_flight, stats.connections
        );
        Ok(())
    })
}

struct BenchOpts {
    users: Option<LevelRange>,
    op: Option<Op>,
    out: PathBuf,
    seed: Option<u64>,
    warmup: Option<f64>,
    measure: Option<f64>,
    alpha: f64,
}

impl BenchOpts {
    fn apply(&self, s: &mut Scenario) -> Result<(), Failure> {
        if let Some(u) = self.users {
            s.sweep.users = u;
        }
        if let Some(op) = self.op {
            s.workload = s.workload.only(op);
        }
        if let Some(w) = self.warmup {
            s.sweep.warmup_s = w;
        }
        if let Some(m) = self.measure {
            s.sweep.measure_s = m;
        }
        s.sweep.validate().map_err(Failure::Config)
    }
}

fn print_summary(stem: &str, report: &SweepReport) {
    println!("{stem}");
    println!(
        "{:>6} {:>8} {:>6} {:>10} {:>10} {:>10} {:>10}",
        "users", "ok", "err", "mean_ms", "p99_ms", "rps", "Bps"
    );
    for r in &report.rows {
        println!(
            "{:>6} {:>8} {:>6} {:>10.2} {:>10.2} {:>10.1} {:>10.0}",
            r.users, r.ok, r.err, r.mean_ms, r.p99_ms, r.rps, r.bps
        );
    }
    match report.knee_users {
        Some(k) => println!("knee: {k} users"),
        None => println!("knee: none"),
    }
}

fn run_one(
    stem: &str,
    sweep: &offload_core::loadgen::SweepConfig,
    target: &Target,
    opts: &BenchOpts,
) -> Result<(), Failure> {
    fs::create_dir_all(&opts.out).map_err(io_target(&opts.out))?;
    let csv_path = opts.out.join(format!("{stem}.csv"));
    let file = File::create(&csv_path).map_err(io_target(&csv_path))?;
    let mut csv = BufWriter::new(file);
    let (report, err) = run_sweep(sweep, target, opts.alpha, &mut csv);
    csv.flush().map_err(io_target(&csv_path))?;
    let svg_path = opts.out.join(format!("{stem}.svg"));
    emit_svg(
        stem,
        &[Curve {
            label: stem,
            rows: &report.rows,
        }],
        &svg_path,
    )
    .map_err(io_target(&svg_path))?;
    print_summary(stem, &report);
    match err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_bench_sim(path: &Path, opts: &BenchOpts) -> Result<(), Failure> {
    let scenarios = load_scenarios(path)?;
    for mut s in scenarios {
        opts.apply(&mut s)?;
        let seed = opts.seed.or(s.seed).ok_or_else(|| {
            Failure::Config(format!(
                "{}: scenario {:?} has no seed; pass --seed",
                path.display(),
                s.name
            ))
        })?;
        let stem = format!("{}_{}_{}", s.mode, s.site, s.workload.label());
        let target = Target::Sim { scenario: &s, seed };
        run_one(&stem, &s.sweep, &target, opts)?;
    }
    Ok(())
}

fn cmd_bench_live(url: &str, scenario: Option<&Path>, opts: &BenchOpts) -> Result<(), Failure> {
    let mut s = match scenario {
        Some(p) => Some(single_scenario(p)?),
        None => None,
    };
    let (mut workload_cfg, mut sweep, estimator, grid) = match &s {
        Some(s) => (s.workload, s.sweep, s.estimator.clone(), s.grid),
        None => Default::default(),
    };
    if let Some(op) = opts.op {
        workload_cfg = workload_cfg.only(op);
    }
    if let Some(u) = opts.users {
        sweep.users = u;
    }
    if let Some(w) = opts.warmup {
        sweep.warmup_s = w;
    }
    if let Some(m) = opts.measure {
        sweep.measure_s = m;
    }
    sweep.validate().map_err(Failure::Config)?;
    let workload = Workload::build(&workload_cfg, &estimator, &grid).map_err(Failure::Config)?;
    let mut target = LiveTarget::from_url(
        url,
        workload,
        opts.seed.or(s.as_ref().and_then(|s| s.seed)).unwrap_or(0),
    )?;
    if let Some(s) = s.take() {
        target.mode_label = s.mode.to_string();
        target.site_label = s.site.to_string();
    }
    let stem = format!(
        "{}_{}_{}",
        target.mode_label,
        sanitize(&target.site_label),
        workload_cfg.label()
    );
    run_one(&stem, &sweep, &Target::Live(&target), opts)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

fn cmd_compare(paths: &[PathBuf], svg: PathBuf, alpha: f64) -> Result<(), Failure> {
    let mut groups: Vec<(String, Vec<SummaryRow>)> = Vec::new();
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        let rows = parse_csv(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        for r in rows {
            let label = format!("{} {} {}", r.mode, r.site, r.op);
            match groups.iter_mut().find(|(l, _)| *l == label) {
                Some((_, rs)) => rs.push(r),
                None => groups.push((label, vec![r])),
            }
        }
    }
    for (_, rows) in &mut groups {
        rows.sort_by_key(|r| r.users);
    }
    let curves: Vec<Curve> = groups.iter().map(|(label, rows)| Curve { label, rows }).collect();
    if let Some(dir) = svg.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_target(dir))?;
    }
    emit_svg("comparison", &curves, &svg).map_err(io_target(&svg))?;
    println!("{:<32} {:>10}", "curve", "knee_users");
    for (label, rows) in &groups {
        let knee = knee_detect(rows, alpha).map_or_else(|| "none".to_string(), |k| k.to_string());
        println!("{label:<32} {knee:>10}");
    }
    println!("wrote {}", svg.display());
    Ok(())
}

/// Writes `writes` distinct records, printing each index once the store has
/// acknowledged it. Meant to be killed part-way.
fn store_torture(path: &Path, writes: u64) -> Result<(), Failure> {
    let (store, _) = ConfigStore::recover_with(path, Durability::Flush).map_err(|e| Failure::Target(e.to_string()))?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for i in 0..writes {
        let key = ConfigKey([i as i64, 0, 0, 0, 0, 0, 0]);
        let config = ChannelConfig {
            modulation: Modulation::Qpsk,
            code_rate: 0.5,
            bandwidth_hz: 1e10,
            tx_power_dbm: 10.0,
            predicted_snr_db: i as f64 * 1e-3,
            predicted_ber: 1e-6,
        };
        store.write(key, config).map_err(|e| Failure::Target(e.to_string()))?;
        writeln!(out, "{i}")
            .and_then(|_| out.flush())
            .map_err(|e| Failure::Target(e.to_string()))?;
    }
    Ok(())
}
