use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::placement::ServiceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    Ready,
    Busy,
    Down,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceEntry {
    pub instance_id: InstanceId,
    /// `read-0`, `monolith`, ...
    pub name: String,
    pub node_id: String,
    /// Kinds served; a monolith serves several.
    pub kinds: Vec<ServiceKind>,
    pub health: Health,
    /// Steps currently held by the instance.
    pub in_service: u32,
    pub concurrency: u32,
}

impl InstanceEntry {
    pub fn serves(&self, kind: ServiceKind) -> bool {
        self.kinds.contains(&kind)
    }
}

/// Instance table keyed by id, iterated in id order.
#[derive(Debug, Clone, Default)]
pub struct ServiceDirectory {
    instances: BTreeMap<InstanceId, InstanceEntry>,
}

impl ServiceDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: InstanceEntry) {
        self.instances.insert(entry.instance_id, entry);
    }

    pub fn remove(&mut self, id: InstanceId) -> Option<InstanceEntry> {
        self.instances.remove(&id)
    }

    pub fn get(&self, id: InstanceId) -> Option<&InstanceEntry> {
        self.instances.get(&id)
    }

    pub fn by_name(&self, name: &str) -> Option<&InstanceEntry> {
        self.instances.values().find(|e| e.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &InstanceEntry> {
        self.instances.values()
    }

    /// Ready instance of `kind` with the fewest steps in service; ties go to
    /// the lowest id.
    pub fn pick_ready(&self, kind: ServiceKind) -> Option<InstanceId> {
        self.instances
            .values()
            .filter(|e| e.health == Health::Ready && e.serves(kind))
            .min_by_key(|e| (e.in_service, e.instance_id))
            .map(|e| e.instance_id)
    }

    pub fn acquire(&mut self, id: InstanceId) {
        let e = self.instances.get_mut(&id).expect("known instance");
        debug_assert_eq!(e.health, Health::Ready);
        e.in_service += 1;
        if e.in_service >= e.concurrency {
            e.health = Health::Busy;
        }
    }

    /// Frees one slot. Returns false if the instance is gone or down.
    pub fn release(&mut self, id: InstanceId) -> bool {
        let Some(e) = self.instances.get_mut(&id) else {
            return false;
        };
        e.in_service = e.in_service.saturating_sub(1);
        match e.health {
            Health::Down => false,
            _ => {
                e.health = Health::Ready;
                true
            }
        }
    }

    pub fn mark_down(&mut self, id: InstanceId) -> bool {
        match self.instances.get_mut(&id) {
            Some(e) if e.health != Health::Down => {
                e.health = Health::Down;
                true
            }
            _ => false,
        }
    }

    pub fn live(&self, kind: ServiceKind) -> impl Iterator<Item = &InstanceEntry> {
        self.instances
            .values()
            .filter(move |e| e.health != Health::Down && e.serves(kind))
    }

    pub fn live_count(&self, kind: ServiceKind) -> usize {
        self.live(kind).count()
    }

    pub fn on_node<'a>(&'a self, node_id: &'a str) -> impl Iterator<Item = InstanceId> + 'a {
        self.instances
            .values()
            .filter(move |e| e.node_id == node_id)
            .map(|e| e.instance_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u32, concurrency: u32) -> InstanceEntry {
        InstanceEntry {
            instance_id: InstanceId(id),
            name: format!("read-{id}"),
            node_id: "n0".into(),
            kinds: vec![ServiceKind::Read],
            health: Health::Ready,
            in_service: 0,
            concurrency,
        }
    }

    #[test]
    fn busy_at_capacity_then_ready() {
        let mut d = ServiceDirectory::new();
        d.insert(entry(0, 2));
        d.acquire(InstanceId(0));
        assert_eq!(d.get(InstanceId(0)).unwrap().health, Health::Ready);
        d.acquire(InstanceId(0));
        assert_eq!(d.get(InstanceId(0)).unwrap().health, Health::Busy);
        assert_eq!(d.pick_ready(ServiceKind::Read), None);
        assert!(d.release(InstanceId(0)));
        assert_eq!(d.pick_ready(ServiceKind::Read), Some(InstanceId(0)));
    }

    #[test]
    fn least_loaded_then_lowest_id() {
        let mut d = ServiceDirectory::new();
        d.insert(entry(3, 4));
        d.insert(entry(1, 4));
        assert_eq!(d.pick_ready(ServiceKind::Read), Some(InstanceId(1)));
        d.acquire(InstanceId(1));
        assert_eq!(d.pick_ready(ServiceKind::Read), Some(InstanceId(3)));
        assert_eq!(d.pick_ready(ServiceKind::Write), None);
    }

    #[test]
    fn down_is_terminal() {
        let mut d = ServiceDirectory::new();
        d.insert(entry(0, 1));
        d.acquire(InstanceId(0));
        assert!(d.mark_down(InstanceId(0)));
        assert!(!d.mark_down(InstanceId(0)));
        assert!(!d.release(InstanceId(0)));
        assert_eq!(d.get(InstanceId(0)).unwrap().health, Health::Down);
        assert_eq!(d.live_count(ServiceKind::Read), 0);
    }
}
