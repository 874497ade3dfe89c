//! Vector bin packing of service instances onto identical worker nodes.
//!
//! [`place_ffd`] is first-fit decreasing on the dominant normalized demand
//! `max(cpu/cpu_total, mem/mem_total)`; [`place_optimal_bruteforce`] is the
//! exact reference used to check it on small inputs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    Read,
    Write,
    Estimate,
    Admin,
    TesterStub,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 5] = [
        ServiceKind::Read,
        ServiceKind::Write,
        ServiceKind::Estimate,
        ServiceKind::Admin,
        ServiceKind::TesterStub,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::Read => "read",
            ServiceKind::Write => "write",
            ServiceKind::Estimate => "estimate",
            ServiceKind::Admin => "admin",
            ServiceKind::TesterStub => "tester_stub",
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ServiceInstanceSpec {
    pub service_kind: ServiceKind,
    pub cpu_millicores: u32,
    pub mem_mb: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCapacity {
    pub node_id: String,
    pub cpu_millicores_total: u32,
    pub mem_mb_total: u32,
    #[serde(default)]
    pub assigned: Vec<ServiceInstanceSpec>,
}

impl NodeCapacity {
    pub fn empty(node_id: impl Into<String>, cpu_millicores_total: u32, mem_mb_total: u32) -> Self {
        Self {
            node_id: node_id.into(),
            cpu_millicores_total,
            mem_mb_total,
            assigned: Vec::new(),
        }
    }

    pub fn cpu_used(&self) -> u64 {
        self.assigned.iter().map(|s| u64::from(s.cpu_millicores)).sum()
    }

    pub fn mem_used(&self) -> u64 {
        self.assigned.iter().map(|s| u64::from(s.mem_mb)).sum()
    }

    pub fn fits(&self, spec: &ServiceInstanceSpec) -> bool {
        self.cpu_used() + u64::from(spec.cpu_millicores) <= u64::from(self.cpu_millicores_total)
            && self.mem_used() + u64::from(spec.mem_mb) <= u64::from(self.mem_mb_total)
    }

    pub fn is_feasible(&self) -> bool {
        self.cpu_used() <= u64::from(self.cpu_millicores_total) && self.mem_used() <= u64::from(self.mem_mb_total)
    }

    pub fn fresh(&self, index: usize) -> Self {
        Self::empty(
            format!("{}-{index}", self.node_id),
            self.cpu_millicores_total,
            self.mem_mb_total,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlacementError {
    #[error("instance {0:?} does not fit an empty node")]
    UnplaceableInstance(ServiceInstanceSpec),
    #[error("exhaustive search is limited to {max} instances, got {got}")]
    TooLarge { max: usize, got: usize },
}

pub const BRUTEFORCE_LIMIT: usize = 10;

fn check_fits(instances: &[ServiceInstanceSpec], template: &NodeCapacity) -> Result<(), PlacementError> {
    let empty = template.fresh(0);
    match instances.iter().find(|s| !empty.fits(s)) {
        Some(s) => Err(PlacementError::UnplaceableInstance(*s)),
        None => Ok(()),
    }
}

/// Dominant share scaled to the common denominator `cpu_total·mem_total`,
/// so comparisons are exact integer comparisons.
fn dominant_share(spec: &ServiceInstanceSpec, template: &NodeCapacity) -> u64 {
    let cpu = u64::from(spec.cpu_millicores) * u64::from(template.mem_mb_total);
    let mem = u64::from(spec.mem_mb) * u64::from(template.cpu_millicores_total);
    cpu.max(mem)
}

/// Indices of `instances` in first-fit-decreasing order.
fn ffd_order(instances: &[ServiceInstanceSpec], template: &NodeCapacity) -> Vec<usize> {
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&instances[a], &instances[b]);
        dominant_share(sb, template)
            .cmp(&dominant_share(sa, template))
            .then(sb.cpu_millicores.cmp(&sa.cpu_millicores))
            .then(sb.mem_mb.cmp(&sa.mem_mb))
            .then(sa.service_kind.cmp(&sb.service_kind))
            .then(a.cmp(&b))
    });
    order
}

/// First-fit decreasing placement. Also returns, for every input instance,
/// the index of the node it was placed on.
pub fn place_ffd_assign(
    instances: &[ServiceInstanceSpec],
    node_template: &NodeCapacity,
) -> Result<(Vec<NodeCapacity>, Vec<usize>), PlacementError> {
    check_fits(instances, node_template)?;
    let mut nodes: Vec<NodeCapacity> = Vec::new();
    let mut assignment = vec![0; instances.len()];
    for idx in ffd_order(instances, node_template) {
        let spec = &instances[idx];
        let slot = match nodes.iter().position(|n| n.fits(spec)) {
            Some(i) => i,
            None => {
                nodes.push(node_template.fresh(nodes.len()));
                nodes.len() - 1
            }
        };
        nodes[slot].assigned.push(*spec);
        assignment[idx] = slot;
    }
    Ok((nodes, assignment))
}

pub fn place_ffd(
    instances: &[ServiceInstanceSpec],
    node_template: &NodeCapacity,
) -> Result<Vec<NodeCapacity>, PlacementError> {
    place_ffd_assign(instances, node_template).map(|(nodes, _)| nodes)
}

/// Minimum-node placement by exhaustive search over set partitions.
pub fn place_optimal_bruteforce(
    instances: &[ServiceInstanceSpec],
    node_template: &NodeCapacity,
) -> Result<Vec<NodeCapacity>, PlacementError> {
    if instances.len() > BRUTEFORCE_LIMIT {
        return Err(PlacementError::TooLarge {
            max: BRUTEFORCE_LIMIT,
            got: instances.len(),
        });
    }
    check_fits(instances, node_template)?;

    struct Search<'a> {
        items: &'a [ServiceInstanceSpec],
        cpu_cap: u64,
        mem_cap: u64,
        bins: Vec<(u64, u64, Vec<usize>)>,
        best: Option<Vec<Vec<usize>>>,
    }

    impl Search<'_> {
        fn best_len(&self) -> usize {
            self.best.as_ref().map_or(usize::MAX, Vec::len)
        }

        fn go(&mut self, i: usize) {
            if self.bins.len() >= self.best_len() {
                return;
            }
            if i == self.items.len() {
                self.best = Some(self.bins.iter().map(|b| b.2.clone()).collect());
                return;
            }
            let cpu = u64::from(self.items[i].cpu_millicores);
            let mem = u64::from(self.items[i].mem_mb);
            for b in 0..self.bins.len() {
                let (c, m, _) = self.bins[b];
                if c + cpu <= self.cpu_cap && m + mem <= self.mem_cap {
                    self.bins[b].0 += cpu;
                    self.bins[b].1 += mem;
                    self.bins[b].2.push(i);
                    self.go(i + 1);
                    self.bins[b].2.pop();
                    self.bins[b].0 -= cpu;
                    self.bins[b].1 -= mem;
                }
            }
            self.bins.push((cpu, mem, vec![i]));
            self.go(i + 1);
            self.bins.pop();
        }
    }

    let mut search = Search {
        items: instances,
        cpu_cap: u64::from(node_template.cpu_millicores_total),
        mem_cap: u64::from(node_template.mem_mb_total),
        bins: Vec::new(),
        best: None,
    };
    search.go(0);
    let groups = search.best.unwrap_or_default();
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(n, members)| {
            let mut node = node_template.fresh(n);
            node.assigned = members.into_iter().map(|i| instances[i]).collect();
            node
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cpu_only(cpus: &[u32]) -> Vec<ServiceInstanceSpec> {
        cpus.iter()
            .map(|&c| ServiceInstanceSpec {
                service_kind: ServiceKind::Read,
                cpu_millicores: c,
                mem_mb: 1,
            })
            .collect()
    }

    fn template(cpu: u32, mem: u32) -> NodeCapacity {
        NodeCapacity::empty("worker", cpu, mem)
    }

    fn cpu_sets(nodes: &[NodeCapacity]) -> Vec<Vec<u32>> {
        nodes
            .iter()
            .map(|n| n.assigned.iter().map(|s| s.cpu_millicores).collect())
            .collect()
    }

    #[test]
    fn empty_input_needs_no_nodes() {
        assert!(place_ffd(&[], &template(6, 100)).unwrap().is_empty());
        assert!(place_optimal_bruteforce(&[], &template(6, 100)).unwrap().is_empty());
    }

    #[test]
    fn classic_five_items() {
        let items = cpu_only(&[5, 4, 3, 2, 1]);
        let nodes = place_ffd(&items, &template(6, 100)).unwrap();
        assert_eq!(cpu_sets(&nodes), vec![vec![5, 1], vec![4, 2], vec![3]]);
        assert_eq!(nodes[0].node_id, "worker-0");
        assert_eq!(place_optimal_bruteforce(&items, &template(6, 100)).unwrap().len(), 3);
    }

    #[test]
    fn oversized_instance() {
        let items = cpu_only(&[2, 10]);
        assert_eq!(
            place_ffd(&items, &template(6, 100)),
            Err(PlacementError::UnplaceableInstance(items[1]))
        );
        assert!(matches!(
            place_optimal_bruteforce(&items, &template(6, 100)),
            Err(PlacementError::UnplaceableInstance(_))
        ));
    }

    #[test]
    fn single_and_full_node_items() {
        assert_eq!(
            place_optimal_bruteforce(&cpu_only(&[3]), &template(6, 100))
                .unwrap()
                .len(),
            1
        );
        let full = cpu_only(&[6; 7]);
        assert_eq!(place_optimal_bruteforce(&full, &template(6, 100)).unwrap().len(), 7);
        assert_eq!(place_ffd(&full, &template(6, 100)).unwrap().len(), 7);
    }

    #[test]
    fn memory_dominant_items_sorted_first() {
        let items = vec![
            ServiceInstanceSpec {
                service_kind: ServiceKind::Read,
                cpu_millicores: 100,
                mem_mb: 900,
            },
            ServiceInstanceSpec {
                service_kind: ServiceKind::Write,
                cpu_millicores: 500,
                mem_mb: 100,
            },
        ];
        let nodes = place_ffd(&items, &template(1000, 1000)).unwrap();
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].assigned[0].mem_mb, 900);
    }

    #[test]
    fn bruteforce_limit() {
        let items = cpu_only(&[1; 11]);
        assert!(matches!(
            place_optimal_bruteforce(&items, &template(6, 100)),
            Err(PlacementError::TooLarge { .. })
        ));
    }

    fn arb_instances(max: usize) -> impl Strategy<Value = Vec<ServiceInstanceSpec>> {
        proptest::collection::vec(
            (0..5usize, 1..=1000u32, 1..=1000u32).prop_map(|(k, c, m)| ServiceInstanceSpec {
                service_kind: ServiceKind::ALL[k],
                cpu_millicores: c,
                mem_mb: m,
            }),
            0..=max,
        )
    }

    proptest! {
        #[test]
        fn ffd_is_feasible_and_complete(items in arb_instances(30)) {
            let nodes = place_ffd(&items, &template(1000, 1000)).unwrap();
            prop_assert!(nodes.iter().all(NodeCapacity::is_feasible));
            prop_assert_eq!(nodes.iter().map(|n| n.assigned.len()).sum::<usize>(), items.len());
        }

        #[test]
        fn ffd_is_deterministic(items in arb_instances(20)) {
            let t = template(1000, 1000);
            prop_assert_eq!(place_ffd(&items, &t).unwrap(), place_ffd(&items, &t).unwrap());
        }

        #[test]
        fn bin_count_permutation_invariant(items in arb_instances(20), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let t = template(1000, 1000);
            let mut shuffled = items.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(place_ffd(&items, &t).unwrap().len(), place_ffd(&shuffled, &t).unwrap().len());
        }

        #[test]
        fn ffd_near_optimal(items in arb_instances(8)) {
            let t = template(1000, 1000);
            let ffd = place_ffd(&items, &t).unwrap().len() as f64;
            let opt = place_optimal_bruteforce(&items, &t).unwrap();
            prop_assert!(opt.iter().all(NodeCapacity::is_feasible));
            prop_assert!(ffd >= opt.len() as f64);
            prop_assert!(ffd <= 11.0 / 9.0 * opt.len() as f64 + 1.0);
        }
    }
}
