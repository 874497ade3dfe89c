//! Response time, throughput and scalability measures, the queueing oracle,
//! and CSV/SVG reports.

mod csv;
mod oracle;
mod svg;

pub use csv::{emit_csv, parse_csv, write_csv_header, write_csv_row, CsvError, CSV_HEADER};
pub use oracle::finite_population_oracle;
pub use svg::{emit_svg, render_svg, Curve};

use serde::{Deserialize, Serialize};

use crate::domain::Status;

/// Raw observations for one (mode, site, op, users) level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mode: String,
    pub site: String,
    pub op: String,
    pub users: u32,
    /// Round-trip latency of successful responses.
    pub latencies_ms: Vec<f64>,
    pub ok: u64,
    pub timeout: u64,
    pub rejected: u64,
    pub failed: u64,
    /// Connection-level failures (no response at all).
    pub transport_errors: u64,
    pub bytes_total: u64,
    pub window_s: f64,
    /// Set when the level was cut short.
    pub partial: bool,
}

impl MetricsRecord {
    pub fn new(mode: &str, site: &str, op: &str, users: u32, window_s: f64) -> Self {
        Self {
            mode: mode.to_string(),
            site: site.to_string(),
            op: op.to_string(),
            users,
            window_s,
            ..Self::default()
        }
    }

    pub fn observe(&mut self, status: Status, latency_ms: f64, bytes: u64) {
        self.bytes_total += bytes;
        match status {
            Status::Ok => {
                self.ok += 1;
                self.latencies_ms.push(latency_ms);
            }
            Status::Timeout => self.timeout += 1,
            Status::Rejected => self.rejected += 1,
            Status::Failed => self.failed += 1,
        }
    }

    pub fn errors(&self) -> u64 {
        self.timeout + self.rejected + self.failed + self.transport_errors
    }

    pub fn responses(&self) -> u64 {
        self.ok + self.timeout + self.rejected + self.failed
    }

    pub fn merge(&mut self, other: &MetricsRecord) {
        self.latencies_ms.extend_from_slice(&other.latencies_ms);
        self.ok += other.ok;
        self.timeout += other.timeout;
        self.rejected += other.rejected;
        self.failed += other.failed;
        self.transport_errors += other.transport_errors;
        self.bytes_total += other.bytes_total;
        self.partial |= other.partial;
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    pub site: String,
    pub op: String,
    pub users: u32,
    pub ok: u64,
    pub err: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    pub rps: f64,
    #[serde(rename = "Bps")]
    pub bps: f64,
}

impl SummaryRow {
    pub fn err_rate(&self) -> f64 {
        let total = self.ok + self.err;
        if total == 0 {
            f64::NAN
        } else {
            self.err as f64 / total as f64
        }
    }

    /// Same values, NaN compared equal to NaN.
    pub fn same_as(&self, other: &SummaryRow) -> bool {
        let eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        self.mode == other.mode
            && self.site == other.site
            && self.op == other.op
            && self.users == other.users
            && self.ok == other.ok
            && self.err == other.err
            && eq(self.mean_ms, other.mean_ms)
            && eq(self.p50_ms, other.p50_ms)
            && eq(self.p95_ms, other.p95_ms)
            && eq(self.p99_ms, other.p99_ms)
            && eq(self.rps, other.rps)
            && eq(self.bps, other.bps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SummaryRow>,
    pub knee_users: Option<u32>,
}

impl SweepReport {
    pub fn new(rows: Vec<SummaryRow>, alpha: f64) -> Self {
        let knee_users = knee_detect(&rows, alpha);
        Self { rows, knee_users }
    }
}

pub const DEFAULT_KNEE_ALPHA: f64 = 3.0;

/// Nearest-rank percentile of sorted data, `p` in (0, 100].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub rps: f64,
    pub bps: f64,
}

pub fn throughput(record: &MetricsRecord) -> Throughput {
    Throughput {
        rps: record.ok as f64 / record.window_s,
        bps: record.bytes_total as f64 / record.window_s,
    }
}

/// Mean and nearest-rank percentiles over successful responses; all-NaN
/// latency columns when there are none.
pub fn aggregate(record: &MetricsRecord) -> SummaryRow {
    let mut sorted = record.latencies_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = if sorted.is_empty() {
        f64::NAN
    } else {
        sorted.iter().sum::<f64>() / sorted.len() as f64
    };
    let t = throughput(record);
    SummaryRow {
        mode: record.mode.clone(),
        site: record.site.clone(),
        op: record.op.clone(),
        users: record.users,
        ok: record.ok,
        err: record.errors(),
        mean_ms: mean,
        p50_ms: percentile_sorted(&sorted, 50.0),
        p95_ms: percentile_sorted(&sorted, 95.0),
        p99_ms: percentile_sorted(&sorted, 99.0),
        rps: t.rps,
        bps: t.bps,
    }
}

/// Smallest level whose mean latency exceeds `alpha` times the lowest level's.
pub fn knee_detect(rows: &[SummaryRow], alpha: f64) -> Option<u32> {
    if rows.len() < 3 {
        return None;
    }
    let baseline = rows.iter().min_by_key(|r| r.users)?.mean_ms;
    if !baseline.is_finite() {
        return None;
    }
    let mut sorted: Vec<&SummaryRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.users);
    sorted
        .into_iter()
        .find(|r| r.mean_ms > alpha * baseline)
        .map(|r| r.users)
}
