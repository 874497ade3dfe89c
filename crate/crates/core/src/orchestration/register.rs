use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::placement::ServiceKind;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("register for {kind} is full ({capacity})")]
pub struct RegisterFull {
    pub kind: ServiceKind,
    pub capacity: usize,
}

/// Bounded FIFO per service kind. Entries carry a global sequence number so
/// that ties across kinds resolve by enqueue order.
#[derive(Debug, Clone)]
pub struct Register<T> {
    capacity: usize,
    queues: BTreeMap<ServiceKind, VecDeque<(u64, T)>>,
    next_seq: u64,
    high_water: usize,
}

impl<T: PartialEq> Register<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            queues: BTreeMap::new(),
            next_seq: 0,
            high_water: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn enqueue(&mut self, kind: ServiceKind, item: T) -> Result<(), RegisterFull> {
        let queue = self.queues.entry(kind).or_default();
        if queue.len() >= self.capacity {
            return Err(RegisterFull {
                kind,
                capacity: self.capacity,
            });
        }
        queue.push_back((self.next_seq, item));
        self.next_seq += 1;
        self.high_water = self.high_water.max(queue.len());
        Ok(())
    }

    pub fn dequeue(&mut self, kind: ServiceKind) -> Option<T> {
        self.queues.get_mut(&kind)?.pop_front().map(|(_, item)| item)
    }

    /// Oldest entry across `kinds`.
    pub fn dequeue_oldest(&mut self, kinds: &[ServiceKind]) -> Option<(ServiceKind, T)> {
        let kind = kinds
            .iter()
            .filter_map(|k| self.queues.get(k)?.front().map(|(seq, _)| (*seq, *k)))
            .min()?
            .1;
        self.dequeue(kind).map(|item| (kind, item))
    }

    pub fn remove(&mut self, item: &T) -> bool {
        for queue in self.queues.values_mut() {
            if let Some(pos) = queue.iter().position(|(_, x)| x == item) {
                queue.remove(pos);
                return true;
            }
        }
        false
    }

    /// Removes and returns every entry waiting for `kind`.
    pub fn drain_kind(&mut self, kind: ServiceKind) -> Vec<T> {
        self.queues
            .remove(&kind)
            .map(|q| q.into_iter().map(|(_, item)| item).collect())
            .unwrap_or_default()
    }

    pub fn len(&self, kind: ServiceKind) -> usize {
        self.queues.get(&kind).map_or(0, VecDeque::len)
    }

    pub fn total_len(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    /// Largest single-kind length seen so far.
    pub fn high_water(&self) -> usize {
        self.high_water
    }
}
