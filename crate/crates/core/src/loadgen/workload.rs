use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    make_config_key, BucketGrid, ChannelConfig, ChannelState, ConfigKey, DataType, QosRequirements, RequestEnvelope,
    RequestId, RequestKind,
};
use crate::estimator::{derive_config, LinkBudgetParams};
use crate::orchestration::Submission;
use crate::runtime::rng::{stream, StreamTag};
use crate::runtime::scenario::Dist;
use crate::store::{ConfigStore, StorageError};

/// Operation class issued by a simulated user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    /// `GET /config`, a resource query.
    Read,
    /// `POST /config`, a resource update.
    Write,
    /// `POST /request`, a channel estimate.
    Estimate,
}

impl Op {
    pub const ALL: [Op; 3] = [Op::Read, Op::Write, Op::Estimate];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Read => "read",
            Op::Write => "write",
            Op::Estimate => "estimate",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Op::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| format!("unknown op {s:?} (read, write, estimate)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub read_fraction: f64,
    pub write_fraction: f64,
    pub estimate_fraction: f64,
    /// Pause between a response and the user's next request.
    pub think_ms: Dist,
    pub deadline_ms: f64,
    /// Number of distinct link profiles requests are drawn from.
    pub profiles: usize,
    pub profile_seed: u64,
    /// Store a configuration for every profile before the run.
    pub prime_store: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            read_fraction: 1.0,
            write_fraction: 0.0,
            estimate_fraction: 0.0,
            think_ms: Dist::constant(0.0),
            deadline_ms: 10_000.0,
            profiles: 64,
            profile_seed: 1,
            prime_store: true,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fr = [self.read_fraction, self.write_fraction, self.estimate_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(format!("workload fractions must lie in [0, 1], got {fr:?}"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(format!("workload fractions must sum to 1, got {fr:?}"));
        }
        self.think_ms
            .validate()
            .map_err(|m| format!("workload.think_ms: {m}"))?;
        if !(self.deadline_ms > 0.0 && self.deadline_ms.is_finite()) {
            return Err(format!(
                "workload.deadline_ms must be positive, got {}",
                self.deadline_ms
            ));
        }
        if self.profiles == 0 {
            return Err("workload.profiles must be positive".into());
        }
        Ok(())
    }

    /// Same workload with every request of one op.
    pub fn only(mut self, op: Op) -> Self {
        self.read_fraction = f64::from(op == Op::Read);
        self.write_fraction = f64::from(op == Op::Write);
        self.estimate_fraction = f64::from(op == Op::Estimate);
        self
    }

    /// The CSV `op` label: the op name, or `mixed`.
    pub fn label(&self) -> &'static str {
        match (self.read_fraction, self.write_fraction, self.estimate_fraction) {
            (1.0, _, _) => "read",
            (_, 1.0, _) => "write",
            (_, _, 1.0) => "estimate",
            _ => "mixed",
        }
    }

    pub fn pick(&self, rng: &mut impl Rng) -> Op {
        let u: f64 = rng.random();
        if u < self.read_fraction {
            Op::Read
        } else if u < self.read_fraction + self.write_fraction {
            Op::Write
        } else {
            Op::Estimate
        }
    }
}

/// A link the tester reports on: QoS, channel state, and the configuration
/// the estimator derives for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkProfile {
    pub qos: QosRequirements,
    pub state: ChannelState,
    pub key: ConfigKey,
    pub config: ChannelConfig,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub config: WorkloadConfig,
    pub profiles: Vec<LinkProfile>,
    pub grid: BucketGrid,
}

/// One user request, in both the cluster's and the wire's terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub op: Op,
    pub profile: usize,
    pub submission: Submission,
}

impl Workload {
    /// Draws `config.profiles` feasible links from the profile seed.
    pub fn build(config: &WorkloadConfig, estimator: &LinkBudgetParams, grid: &BucketGrid) -> Result<Self, String> {
        config.validate()?;
        let mut rng = stream(config.profile_seed, StreamTag::Profiles, 0);
        let mut profiles = Vec::with_capacity(config.profiles);
        let mut attempts = 0;
        while profiles.len() < config.profiles {
            attempts += 1;
            if attempts > 1000 * config.profiles {
                return Err("could not draw feasible link profiles".into());
            }
            let qos = QosRequirements {
                bitrate_bps: 10f64.powf(rng.random_range(8.0..10.0)),
                ber_max: 10f64.powf(-rng.random_range(3.0..6.0)),
                bandwidth_hz: 10f64.powf(rng.random_range(9.0..10.5)),
                data_type: [DataType::Bulk, DataType::Stream, DataType::Control][rng.random_range(0..3)],
                deadline_ms: config.deadline_ms,
            };
            let state = ChannelState {
                frequency_hz: rng.random_range(100e9..500e9),
                distance_m: rng.random_range(0.5..10.0),
                humidity_pct: rng.random_range(10.0..90.0),
                temperature_c: rng.random_range(10.0..35.0),
                measured_snr_db: None,
            };
            if let Some(cfg) = derive_config(&qos, &state, estimator) {
                profiles.push(LinkProfile {
                    qos,
                    state,
                    key: make_config_key(&qos, &state, grid),
                    config: cfg,
                });
            }
        }
        Ok(Self {
            config: *config,
            profiles,
            grid: *grid,
        })
    }

    /// Writes every profile's configuration, stamped `ts`.
    pub fn prime(&self, store: &ConfigStore, ts: u64) -> Result<(), StorageError> {
        for p in &self.profiles {
            store.write_at(p.key, p.config, ts)?;
        }
        Ok(())
    }

    pub fn draw(&self, rng: &mut impl Rng, client_id: RequestId) -> Draw {
        let op = self.config.pick(rng);
        let profile = rng.random_range(0..self.profiles.len());
        let p = &self.profiles[profile];
        let deadline = self.config.deadline_ms;
        let submission = match op {
            Op::Read => Submission::query(client_id, p.key, deadline),
            Op::Write => Submission::update(client_id, p.key, p.config, deadline),
            Op::Estimate => Submission::from_envelope(&self.envelope(profile, client_id), &self.grid),
        };
        Draw {
            op,
            profile,
            submission,
        }
    }

    pub fn envelope(&self, profile: usize, client_id: RequestId) -> RequestEnvelope {
        let p = &self.profiles[profile];
        RequestEnvelope {
            id: client_id,
            kind: RequestKind::ChannelEstimate,
            qos: p.qos,
            state: p.state,
            arrival_ts: 0,
            deadline_ms: self.config.deadline_ms,
        }
    }
}
