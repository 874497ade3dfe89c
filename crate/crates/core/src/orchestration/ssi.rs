//! Service State Information: the service catalog (static section), the live
//! replica state (dynamic section), the worker node template and the
//! orchestration limits.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::placement::{NodeCapacity, ServiceInstanceSpec, ServiceKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticService {
    pub service_kind: ServiceKind,
    pub min_cpu_millicores: u32,
    pub min_mem_mb: u32,
    pub initial_replicas: u32,
}

impl StaticService {
    pub fn instance_spec(&self) -> ServiceInstanceSpec {
        ServiceInstanceSpec {
            service_kind: self.service_kind,
            cpu_millicores: self.min_cpu_millicores,
            mem_mb: self.min_mem_mb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicService {
    pub current_replicas: u32,
    #[serde(default = "yes")]
    pub available: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsiLimits {
    /// Per service kind.
    pub register_capacity: usize,
    pub max_replicas_per_kind: u32,
    pub min_replicas_per_kind: u32,
}

impl Default for SsiLimits {
    fn default() -> Self {
        Self {
            register_capacity: 1024,
            max_replicas_per_kind: 8,
            min_replicas_per_kind: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ssi {
    #[serde(rename = "static")]
    pub static_services: Vec<StaticService>,
    #[serde(default)]
    pub dynamic: BTreeMap<ServiceKind, DynamicService>,
    pub node_template: NodeCapacity,
    #[serde(default)]
    pub limits: SsiLimits,
}

#[derive(Debug, Error)]
pub enum SsiError {
    #[error("{path}: {source}")]
    Read {
        path: String,
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
    #[error("{origin}: {msg}")]
    Invariant { origin: String, msg: String },
}

pub fn load_ssi(path: impl AsRef<Path>) -> Result<Ssi, SsiError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SsiError::Read {
        path: path.display().to_string(),
        source,
    })?;
    Ssi::from_json(&text, &path.display().to_string())
}

impl Ssi {
    /// Parses and invariant-checks an SSI document; a missing dynamic entry is
    /// filled from the static `initial_replicas`.
    pub fn from_json(text: &str, origin: &str) -> Result<Ssi, SsiError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut ssi: Ssi = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            SsiError::Parse {
                origin: origin.to_string(),
                line: inner.line(),
                column: inner.column(),
                field,
                msg: inner.to_string(),
            }
        })?;
        ssi.fill_defaults();
        ssi.check(origin)?;
        Ok(ssi)
    }

    fn fill_defaults(&mut self) {
        for s in &self.static_services {
            self.dynamic.entry(s.service_kind).or_insert(DynamicService {
                current_replicas: s.initial_replicas,
                available: true,
            });
        }
    }

    fn check(&self, origin: &str) -> Result<(), SsiError> {
        let fail = |msg: String| {
            Err(SsiError::Invariant {
                origin: origin.to_string(),
                msg,
            })
        };
        let mut seen = BTreeSet::new();
        for s in &self.static_services {
            if !seen.insert(s.service_kind) {
                return fail(format!("service kind {} listed more than once", s.service_kind));
            }
            if s.min_cpu_millicores == 0 || s.min_mem_mb == 0 {
                return fail(format!("{}: resource minima must be positive", s.service_kind));
            }
        }
        let SsiLimits {
            min_replicas_per_kind: min,
            max_replicas_per_kind: max,
            register_capacity,
        } = self.limits;
        if min > max {
            return fail(format!("min_replicas_per_kind {min} > max_replicas_per_kind {max}"));
        }
        if register_capacity == 0 {
            return fail("register_capacity must be positive".into());
        }
        for (kind, d) in &self.dynamic {
            if !seen.contains(kind) {
                return fail(format!("dynamic entry for {kind} has no static entry"));
            }
            if d.current_replicas < min || d.current_replicas > max {
                return fail(format!(
                    "{kind}: current_replicas {} outside [{min}, {max}]",
                    d.current_replicas
                ));
            }
        }
        if self.node_template.cpu_millicores_total == 0 || self.node_template.mem_mb_total == 0 {
            return fail("node_template capacity must be positive".into());
        }
        Ok(())
    }

    pub fn service(&self, kind: ServiceKind) -> Option<&StaticService> {
        self.static_services.iter().find(|s| s.service_kind == kind)
    }

    pub fn replicas(&self, kind: ServiceKind) -> u32 {
        self.dynamic.get(&kind).map_or(0, |d| d.current_replicas)
    }

    /// One spec per replica, in static order.
    pub fn initial_instances(&self) -> Vec<ServiceInstanceSpec> {
        self.static_services
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.instance_spec(), self.replicas(s.service_kind) as usize))
            .collect()
    }
}
