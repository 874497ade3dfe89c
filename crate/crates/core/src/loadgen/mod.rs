//! Closed-loop load generation: user workloads, concurrency sweeps, and the
//! simulated and socket transports.

mod client;
mod workload;

pub use client::{run_live_level, LiveTarget};
pub use workload::{Draw, LinkProfile, Op, Workload, WorkloadConfig};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{aggregate, write_csv_header, write_csv_row, MetricsRecord, SummaryRow, SweepReport};
use crate::runtime::scenario::Scenario;
use crate::runtime::sim::{run_simulation, SimError, SimOptions};

/// `start:end:step`, inclusive of `end` when it falls on a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LevelRange {
    pub start: u32,
    pub end: u32,
    pub step: u32,
}

impl LevelRange {
    pub fn levels(&self) -> Vec<u32> {
        (self.start..=self.end).step_by(self.step as usize).collect()
    }
}

impl Default for LevelRange {
    fn default() -> Self {
        Self {
            start: 50,
            end: 1300,
            step: 50,
        }
    }
}

impl FromStr for LevelRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, c] = parts[..] else {
            return Err(format!("expected start:end:step, got {s:?}"));
        };
        let num = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("{x:?}: {e}"));
        let range = LevelRange {
            start: num(a)?,
            end: num(b)?,
            step: num(c)?,
        };
        if range.step == 0 {
            return Err("step must be positive".into());
        }
        if range.start > range.end {
            return Err(format!("start {} exceeds end {}", range.start, range.end));
        }
        Ok(range)
    }
}

impl TryFrom<String> for LevelRange {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<LevelRange> for String {
    fn from(r: LevelRange) -> String {
        r.to_string()
    }
}

impl fmt::Display for LevelRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub users: LevelRange,
    pub warmup_s: f64,
    pub measure_s: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            users: LevelRange::default(),
            warmup_s: 5.0,
            measure_s: 10.0,
        }
    }
}

impl SweepConfig {
    pub fn levels(&self) -> Vec<u32> {
        self.users.levels()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.users.step == 0 || self.users.start > self.users.end {
            return Err(format!("invalid user range {}", self.users));
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s.is_finite()) {
            return Err(format!("warmup_s must be non-negative, got {}", self.warmup_s));
        }
        if !(self.measure_s > 0.0 && self.measure_s.is_finite()) {
            return Err(format!("measure_s must be positive, got {}", self.measure_s));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LoadgenError {
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Where the users send their requests.
pub enum Target<'a> {
    Sim { scenario: &'a Scenario, seed: u64 },
    Live(&'a LiveTarget),
}

impl Target<'_> {
    pub fn labels(&self) -> (String, String, String) {
        match self {
            Target::Sim { scenario, .. } => (
                scenario.mode.as_str().to_string(),
                scenario.site.as_str().to_string(),
                scenario.workload.label().to_string(),
            ),
            Target::Live(t) => (
                t.mode_label.clone(),
                t.site_label.clone(),
                t.workload.config.label().to_string(),
            ),
        }
    }
}

/// One concurrency level: `users` closed loops for warmup (discarded) plus
/// measure (recorded).
pub fn run_level(users: u32, sweep: &SweepConfig, target: &Target) -> Result<MetricsRecord, LoadgenError> {
    match target {
        Target::Sim { scenario, seed } => {
            let out = run_simulation(
                scenario,
                &SimOptions {
                    users,
                    warmup_s: sweep.warmup_s,
                    measure_s: sweep.measure_s,
                    seed: *seed,
                    trace: false,
                },
            )?;
            Ok(out.record)
        }
        Target::Live(t) => {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(run_live_level(t, users, sweep.warmup_s, sweep.measure_s))
        }
    }
}

/// Runs every level in order, appending each CSV row to `csv` as soon as it
/// is known. A failing level leaves a partial, all-error row and the sweep
/// continues; the first error is returned alongside the report.
pub fn run_sweep<W: Write>(
    sweep: &SweepConfig,
    target: &Target,
    alpha: f64,
    csv: &mut W,
) -> (SweepReport, Option<LoadgenError>) {
    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut first_error = None;
    if let Err(e) = write_csv_header(csv) {
        return (SweepReport::new(rows, alpha), Some(e.into()));
    }
    let (mode, site, op) = target.labels();
    for users in sweep.levels() {
        let record = match run_level(users, sweep, target) {
            Ok(r) => r,
            Err(e) => {
                log::error!("level {users}: {e}");
                let mut r = MetricsRecord::new(&mode, &site, &op, users, sweep.measure_s);
                r.partial = true;
                r.transport_errors = 1;
                first_error.get_or_insert(e);
                r
            }
        };
        let row = aggregate(&record);
        log::info!(
            "{} {} {} users={} ok={} err={} mean={:.2}ms rps={:.1}",
            row.mode,
            row.site,
            row.op,
            row.users,
            row.ok,
            row.err,
            row.mean_ms,
            row.rps
        );
        if let Err(e) = write_csv_row(csv, &row).and_then(|_| csv.flush()) {
            first_error.get_or_insert(e.into());
        }
        rows.push(row);
    }
    (SweepReport::new(rows, alpha), first_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_has_26_levels() {
        let levels = SweepConfig::default().levels();
        assert_eq!(levels.len(), 26);
        assert_eq!((levels[0], levels[25]), (50, 1300));
    }

    #[test]
    fn range_parsing() {
        assert_eq!("10:10:10".parse::<LevelRange>().unwrap().levels(), [10]);
        assert_eq!("50:100:50".parse::<LevelRange>().unwrap().levels(), [50, 100]);
        assert_eq!("0:7:5".parse::<LevelRange>().unwrap().levels(), [0, 5]);
        for bad in ["1:2", "5:1:1", "1:5:0", "a:b:c"] {
            assert!(bad.parse::<LevelRange>().is_err(), "{bad}");
        }
        let json = serde_json::to_string(&LevelRange::default()).unwrap();
        assert_eq!(json, r#""50:1300:50""#);
    }
}
