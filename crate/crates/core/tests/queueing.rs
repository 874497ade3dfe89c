use std::path::Path;

use offload_core::metrics::{finite_population_oracle, throughput};
use offload_core::runtime::rng::{stream, StreamTag};
use offload_core::runtime::scenario::parse_scenarios;
use offload_core::runtime::sim::{run_simulation, SimOptions};
use rand::Rng;
use rand_distr::{Distribution, Exp};

/// Event-by-event simulation of the birth-death chain: k requests at the
/// servers, n - k users thinking.
fn ctmc_throughput(n: usize, c: usize, s_ms: f64, z_ms: f64, events: usize) -> f64 {
    let mut rng = stream(11, StreamTag::Misc, (n * 100 + c) as u64);
    let (mut k, mut t, mut done) = (0usize, 0.0f64, 0u64);
    for _ in 0..events {
        let up = (n - k) as f64 / z_ms;
        let down = k.min(c) as f64 / s_ms;
        let total = up + down;
        t += Exp::new(total).unwrap().sample(&mut rng);
        if rng.random::<f64>() * total < up {
            k += 1;
        } else {
            k -= 1;
            done += 1;
        }
    }
    1000.0 * done as f64 / t
}

#[test]
fn oracle_matches_independent_chain() {
    for (n, c) in [(8, 2), (3, 1), (16, 4)] {
        let want = ctmc_throughput(n, c, 10.0, 10.0, 2_000_000);
        let got = finite_population_oracle(n as u32, c as u32, 10.0, 10.0);
        assert!(
            (got - want).abs() / want < 0.01,
            "n={n} c={c}: oracle {got} chain {want}"
        );
    }
}

#[test]
fn simulator_matches_oracle() {
    let text = r#"{
        "mode": "swarm_style", "site": "edge",
        "ssi": {
            "static": [
                {"service_kind": "read", "min_cpu_millicores": 500, "min_mem_mb": 256, "initial_replicas": 1},
                {"service_kind": "write", "min_cpu_millicores": 500, "min_mem_mb": 256, "initial_replicas": 1}
            ],
            "node_template": {"node_id": "worker", "cpu_millicores_total": 4000, "mem_mb_total": 8192},
            "limits": {"register_capacity": 4096, "max_replicas_per_kind": 4, "min_replicas_per_kind": 1}
        },
        "link": {"one_way_delay_ms": {"kind": "constant", "value": 0}},
        "preprocess_ms": 0,
        "service_time_ms": {"read": {"kind": "exponential", "mean": 10}},
        "concurrency": {"read": 2},
        "workload": {"think_ms": {"kind": "exponential", "mean": 20}}
    }"#;
    let scenario = parse_scenarios(text, "test", Path::new(".")).unwrap().remove(0);
    for users in [1, 5, 12] {
        let out = run_simulation(
            &scenario,
            &SimOptions {
                users,
                warmup_s: 5.0,
                measure_s: 200.0,
                seed: 3,
                trace: false,
            },
        )
        .unwrap();
        let sim = throughput(&out.record).rps;
        let oracle = finite_population_oracle(users, 2, 10.0, 20.0);
        assert!(
            (sim - oracle).abs() / oracle < 0.03,
            "users={users}: sim {sim} oracle {oracle}"
        );
    }
}
