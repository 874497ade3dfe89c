//! Scenario files: one JSON object per cluster deployment, or a set
//! `{"defaults": {...}, "scenarios": [{...}, ...]}` whose entries are merged
//! over the defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::BucketGrid;
use crate::estimator::{LinkBudgetParams, ParamsError};
use crate::loadgen::{SweepConfig, WorkloadConfig};
use crate::orchestration::autoscale::AutoscalerPolicy;
use crate::orchestration::plan::PlanOptions;
use crate::orchestration::ssi::{load_ssi, Ssi, SsiError};
use crate::orchestration::{ClusterConfig, Mode};
use crate::placement::ServiceKind;
use crate::store::Durability;

/// Non-negative random quantity in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Exponential {
        mean: f64,
    },
    /// Parameters of the underlying normal (of ln ms).
    Lognormal {
        mu: f64,
        sigma: f64,
    },
}

impl Dist {
    pub fn constant(value: f64) -> Self {
        Dist::Constant { value }
    }

    pub fn exponential(mean: f64) -> Self {
        Dist::Exponential { mean }
    }

    /// Lognormal with the given mean and shape `sigma`.
    pub fn lognormal_with_mean(mean: f64, sigma: f64) -> Self {
        Dist::Lognormal {
            mu: mean.ln() - sigma * sigma / 2.0,
            sigma,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Uniform { low, high } => (low + high) / 2.0,
            Dist::Exponential { mean } => mean,
            Dist::Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            Dist::Constant { value } => value >= 0.0 && value.is_finite(),
            Dist::Uniform { low, high } => low >= 0.0 && high >= low && high.is_finite(),
            Dist::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            Dist::Lognormal { mu, sigma } => mu.is_finite() && sigma >= 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid distribution {self:?}"))
        }
    }

    pub fn sample_ms(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Dist::Constant { value } => value,
            Dist::Uniform { low, high } => {
                if high > low {
                    rng.random_range(low..high)
                } else {
                    low
                }
            }
            Dist::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
            Dist::Lognormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").sample(rng),
        }
    }

    pub fn sample_ns(&self, rng: &mut impl Rng) -> u64 {
        ms_to_ns(self.sample_ms(rng))
    }
}

pub fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Edge,
    Cloud,
}

impl Site {
    pub fn as_str(self) -> &'static str {
        match self {
            Site::Edge => "edge",
            Site::Cloud => "cloud",
        }
    }

    pub fn default_link(self) -> LinkModel {
        let delay = match self {
            Site::Edge => 1.0,
            Site::Cloud => 20.0,
        };
        LinkModel {
            one_way_delay_ms: Dist::constant(delay),
            bandwidth_bps: None,
        }
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tester-to-cluster link, applied to every message in each direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub one_way_delay_ms: Dist,
    #[serde(default, rename = "bandwidth_Bps")]
    pub bandwidth_bps: Option<f64>,
}

impl LinkModel {
    /// One-way transfer time of a `bytes`-long message.
    pub fn sample_ns(&self, bytes: usize, rng: &mut impl Rng) -> u64 {
        let serialization = self.bandwidth_bps.map_or(0, |bw| ms_to_ns(bytes as f64 / bw * 1e3));
        self.one_way_delay_ms.sample_ns(rng) + serialization
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub path: Option<PathBuf>,
    pub results_path: Option<PathBuf>,
    pub durability: Durability,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FailureSpec {
    Node(String),
    Instance(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledFailure {
    /// Seconds after the start of the run.
    pub at_s: f64,
    pub target: FailureSpec,
}

pub fn default_service_times() -> BTreeMap<ServiceKind, Dist> {
    BTreeMap::from([
        (ServiceKind::Read, Dist::exponential(2.0)),
        (ServiceKind::Write, Dist::exponential(6.0)),
        (ServiceKind::Estimate, Dist::exponential(20.0)),
    ])
}

fn default_monolith_concurrency() -> u32 {
    8
}

/// The on-disk form; `ssi` and `estimator` are a path or an inline object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: Option<String>,
    mode: Mode,
    site: Site,
    ssi: Value,
    #[serde(default)]
    link: Option<LinkModel>,
    #[serde(default)]
    service_time_ms: BTreeMap<ServiceKind, Dist>,
    #[serde(default)]
    concurrency: BTreeMap<ServiceKind, u32>,
    #[serde(default = "default_monolith_concurrency")]
    monolith_concurrency: u32,
    #[serde(default)]
    preprocess_ms: Option<f64>,
    #[serde(default)]
    estimator: Option<Value>,
    #[serde(default)]
    store: StoreConfig,
    #[serde(default)]
    plan: PlanOptions,
    #[serde(default)]
    autoscaler: AutoscalerPolicy,
    #[serde(default)]
    grid: BucketGrid,
    #[serde(default)]
    workload: WorkloadConfig,
    #[serde(default)]
    sweep: SweepConfig,
    #[serde(default)]
    failures: Vec<ScheduledFailure>,
    #[serde(default)]
    seed: Option<u64>,
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub site: Site,
    pub ssi: Ssi,
    pub link: LinkModel,
    pub service_time_ms: BTreeMap<ServiceKind, Dist>,
    pub concurrency: BTreeMap<ServiceKind, u32>,
    pub monolith_concurrency: u32,
    pub preprocess_ms: f64,
    pub estimator: LinkBudgetParams,
    pub store: StoreConfig,
    pub plan: PlanOptions,
    pub autoscaler: AutoscalerPolicy,
    pub grid: BucketGrid,
    pub workload: WorkloadConfig,
    pub sweep: SweepConfig,
    pub failures: Vec<ScheduledFailure>,
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {field}: {msg}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        field: String,
        msg: String,
    },
    #[error(transparent)]
    Ssi(#[from] SsiError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("{origin}: {msg}")]
    Invalid { origin: String, msg: String },
}

fn parse_error(origin: &str, e: serde_path_to_error::Error<serde_json::Error>) -> ConfigError {
    let field = e.path().to_string();
    let inner = e.into_inner();
    ConfigError::Parse {
        origin: origin.to_string(),
        line: inner.line(),
        column: inner.column(),
        field,
        msg: inner.to_string(),
    }
}

/// Recursively overlays `patch` on `base`; objects merge, anything else replaces.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Loads a scenario file or a scenario set.
pub fn load_scenarios(path: impl AsRef<Path>) -> Result<Vec<Scenario>, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let origin = path.display().to_string();
    let base_dir = path.parent().unwrap_or(Path::new("."));
    parse_scenarios(&text, &origin, base_dir)
}

/// Loads a file that must hold exactly one scenario.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ConfigError> {
    let path = path.as_ref();
    let mut all = load_scenarios(path)?;
    if all.len() != 1 {
        return Err(ConfigError::Invalid {
            origin: path.display().to_string(),
            msg: format!("expected one scenario, found {}", all.len()),
        });
    }
    Ok(all.remove(0))
}

pub fn parse_scenarios(text: &str, origin: &str, base_dir: &Path) -> Result<Vec<Scenario>, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value: Value = serde_path_to_error::deserialize(de).map_err(|e| parse_error(origin, e))?;
    match value.get("scenarios") {
        Some(Value::Array(entries)) => {
            let defaults = value
                .get("defaults")
                .cloned()
                .unwrap_or(Value::Object(Default::default()));
            entries
                .iter()
                .enumerate()
                .map(|(i, entry)| {
                    let mut merged = defaults.clone();
                    merge_json(&mut merged, entry);
                    Scenario::from_value(merged, &format!("{origin}[scenarios.{i}]"), base_dir)
                })
                .collect()
        }
        Some(_) => Err(ConfigError::Invalid {
            origin: origin.to_string(),
            msg: "`scenarios` must be an array".into(),
        }),
        None => Ok(vec![Scenario::from_value(value, origin, base_dir)?]),
    }
}

fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

impl Scenario {
    pub fn from_value(value: Value, origin: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawScenario = serde_path_to_error::deserialize(value).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Parse {
                origin: origin.to_string(),
                line: 0,
                column: 0,
                field,
                msg: e.into_inner().to_string(),
            }
        })?;
        let invalid = |msg: String| ConfigError::Invalid {
            origin: origin.to_string(),
            msg,
        };

        let ssi = match &raw.ssi {
            Value::String(p) => load_ssi(resolve(base_dir, Path::new(p)))?,
            v @ Value::Object(_) => Ssi::from_json(&v.to_string(), &format!("{origin}.ssi"))?,
            _ => return Err(invalid("ssi must be a path or an object".into())),
        };
        let estimator = match &raw.estimator {
            None => LinkBudgetParams::default(),
            Some(Value::String(p)) => LinkBudgetParams::load(resolve(base_dir, Path::new(p)))?,
            Some(v @ Value::Object(_)) => {
                let p: LinkBudgetParams = serde_path_to_error::deserialize(v.clone()).map_err(|e| {
                    let path = e.path().to_string();
                    invalid(format!("estimator.{path}: {}", e.into_inner()))
                })?;
                p.validate()?;
                p
            }
            Some(_) => return Err(invalid("estimator must be a path or an object".into())),
        };

        let mut service_time_ms = default_service_times();
        service_time_ms.extend(raw.service_time_ms);
        for (kind, d) in &service_time_ms {
            d.validate()
                .map_err(|m| invalid(format!("service_time_ms.{kind}: {m}")))?;
        }
        let link = raw.link.unwrap_or_else(|| raw.site.default_link());
        link.one_way_delay_ms
            .validate()
            .map_err(|m| invalid(format!("link.one_way_delay_ms: {m}")))?;
        if link.bandwidth_bps.is_some_and(|b| !(b > 0.0)) {
            return Err(invalid("link.bandwidth_Bps must be positive".into()));
        }
        if raw.concurrency.values().any(|&c| c == 0) || raw.monolith_concurrency == 0 {
            return Err(invalid("concurrency limits must be positive".into()));
        }
        let preprocess_ms = raw.preprocess_ms.unwrap_or_else(|| raw.mode.default_preprocess_ms());
        if !(preprocess_ms >= 0.0 && preprocess_ms.is_finite()) {
            return Err(invalid(format!(
                "preprocess_ms must be non-negative, got {preprocess_ms}"
            )));
        }
        raw.workload.validate().map_err(&invalid)?;
        raw.sweep.validate().map_err(&invalid)?;
        for f in &raw.failures {
            if !(f.at_s >= 0.0) {
                return Err(invalid(format!("failure time {} must be non-negative", f.at_s)));
            }
        }
        let store = StoreConfig {
            path: raw.store.path.map(|p| resolve(base_dir, &p)),
            results_path: raw.store.results_path.map(|p| resolve(base_dir, &p)),
            durability: raw.store.durability,
        };
        let name = raw
            .name
            .unwrap_or_else(|| format!("{}_{}", raw.mode.as_str(), raw.site.as_str()));
        Ok(Scenario {
            name,
            mode: raw.mode,
            site: raw.site,
            ssi,
            link,
            service_time_ms,
            concurrency: raw.concurrency,
            monolith_concurrency: raw.monolith_concurrency,
            preprocess_ms,
            estimator,
            store,
            plan: raw.plan,
            autoscaler: raw.autoscaler,
            grid: raw.grid,
            workload: raw.workload,
            sweep: raw.sweep,
            failures: raw.failures,
            seed: raw.seed,
        })
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            mode: self.mode,
            ssi: self.ssi.clone(),
            concurrency: self.concurrency.clone(),
            monolith_concurrency: self.monolith_concurrency,
            preprocess_ms: self.preprocess_ms,
            plan: self.plan,
            autoscaler: self.autoscaler,
            grid: self.grid,
            estimator: self.estimator.clone(),
        }
    }

    pub fn service_time(&self, kind: ServiceKind) -> Dist {
        self.service_time_ms
            .get(&kind)
            .copied()
            .unwrap_or_else(|| Dist::constant(0.0))
    }
}
