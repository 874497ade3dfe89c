/// Throughput (requests/s) of the closed machine-repairman system: `n_users`
/// alternating between an exponential think of mean `think_ms` and a
/// `c_servers` FCFS station with exponential service of mean
/// `mean_service_ms`. Solved from the birth-death steady state in log space.
pub fn finite_population_oracle(n_users: u32, c_servers: u32, mean_service_ms: f64, think_ms: f64) -> f64 {
    assert!(n_users >= 1 && c_servers >= 1, "need n >= 1 and c >= 1");
    assert!(mean_service_ms > 0.0 && think_ms >= 0.0);
    let n = n_users as usize;
    let c = c_servers as usize;
    let mu = |k: usize| k.min(c) as f64 / mean_service_ms;
    if think_ms == 0.0 {
        return 1000.0 * mu(n);
    }
    let lambda = |k: usize| (n - k) as f64 / think_ms;
    let mut log_p = Vec::with_capacity(n + 1);
    log_p.push(0.0f64);
    for k in 1..=n {
        let prev = log_p[k - 1];
        log_p.push(prev + lambda(k - 1).ln() - mu(k).ln());
    }
    let max = log_p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_p.iter().map(|l| (l - max).exp()).collect();
    let norm: f64 = weights.iter().sum();
    let x: f64 = weights.iter().enumerate().map(|(k, w)| w * mu(k)).sum::<f64>() / norm;
    1000.0 * x
}
