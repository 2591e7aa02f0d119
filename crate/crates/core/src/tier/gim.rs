//! Tier placement: round-robin allocation, least-loaded scale-out and
//! node replacement. All functions are pure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::transport::{Endpoint, TransportKind};

use super::{TierError, TierIdentity};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    pub endpoint: Endpoint,
    pub hosted: Vec<TierIdentity>,
    pub alive: bool,
}

impl NodeDescriptor {
    pub fn new(node_id: impl Into<String>, endpoint: Endpoint, hosted: Vec<TierIdentity>) -> Self {
        Self {
            node_id: node_id.into(),
            endpoint,
            hosted,
            alive: true,
        }
    }

    pub fn transport(&self) -> TransportKind {
        self.endpoint.kind()
    }

    pub fn hosts(&self, identity: TierIdentity) -> bool {
        self.alive && self.hosted.contains(&identity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub node_id: String,
    pub tier_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub nodes: Vec<NodeDescriptor>,
    pub tiers: BTreeMap<TierIdentity, Vec<Placement>>,
    pub replication: BTreeMap<TierIdentity, usize>,
    /// Instances ever issued per identity; numbers new tier ids.
    issued: BTreeMap<TierIdentity, usize>,
}

/// Assign tier instances to nodes. Each identity gets its replication
/// target (default 1; DST is always exactly 1), dealt round-robin over the
/// nodes able to host it, in topology order.
pub fn gim_allocate(
    topology: &[NodeDescriptor],
    replication: &BTreeMap<TierIdentity, usize>,
) -> Result<Allocation, TierError> {
    let mut alloc = Allocation {
        nodes: topology.to_vec(),
        tiers: BTreeMap::new(),
        replication: BTreeMap::new(),
        issued: BTreeMap::new(),
    };
    for identity in TierIdentity::ALL {
        let target = match identity {
            TierIdentity::Dst => 1,
            _ => replication.get(&identity).copied().unwrap_or(1).max(1),
        };
        alloc.replication.insert(identity, target);
        let hosts: Vec<String> = topology
            .iter()
            .filter(|n| n.hosts(identity))
            .map(|n| n.node_id.clone())
            .collect();
        if hosts.is_empty() {
            return Err(TierError::Unsatisfiable(identity));
        }
        for i in 0..target {
            let node_id = hosts[i % hosts.len()].clone();
            let tier_id = alloc.issue(identity);
            alloc
                .tiers
                .entry(identity)
                .or_default()
                .push(Placement { node_id, tier_id });
        }
    }
    Ok(alloc)
}

impl Allocation {
    fn issue(&mut self, identity: TierIdentity) -> String {
        let n = self.issued.entry(identity).or_default();
        let id = format!("{}-{}", identity.name().to_lowercase(), *n);
        *n += 1;
        id
    }

    pub fn node(&self, node_id: &str) -> Option<&NodeDescriptor> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    pub fn placements(&self, identity: TierIdentity) -> &[Placement] {
        self.tiers.get(&identity).map_or(&[], Vec::as_slice)
    }

    pub fn count(&self, identity: TierIdentity) -> usize {
        self.placements(identity).len()
    }

    /// Every placement with its identity, in identity then placement order.
    pub fn all(&self) -> impl Iterator<Item = (TierIdentity, &Placement)> {
        self.tiers
            .iter()
            .flat_map(|(id, ps)| ps.iter().map(move |p| (*id, p)))
    }

    pub fn on_node<'a>(
        &'a self,
        node_id: &'a str,
    ) -> impl Iterator<Item = (TierIdentity, &'a Placement)> + 'a {
        self.all().filter(move |(_, p)| p.node_id == node_id)
    }

    fn load(&self, node_id: &str) -> usize {
        self.on_node(node_id).count()
    }

    /// Live host for `identity` with the fewest tiers; ties go to the
    /// earlier node in topology order.
    fn least_loaded(&self, identity: TierIdentity) -> Result<String, TierError> {
        self.nodes
            .iter()
            .filter(|n| n.hosts(identity))
            .min_by_key(|n| self.load(&n.node_id))
            .map(|n| n.node_id.clone())
            .ok_or(TierError::Unsatisfiable(identity))
    }

    /// One more instance of `identity` on the least-loaded live host.
    /// Returns the new allocation and the new placement.
    pub fn scale_out(&self, identity: TierIdentity) -> Result<(Allocation, Placement), TierError> {
        let mut next = self.clone();
        let node_id = next.least_loaded(identity)?;
        let placement = Placement {
            node_id,
            tier_id: next.issue(identity),
        };
        next.tiers
            .entry(identity)
            .or_default()
            .push(placement.clone());
        *next.replication.entry(identity).or_default() += 1;
        Ok((next, placement))
    }

    /// Mark `dead` not alive without moving its tiers.
    pub fn mark_dead(&self, dead: &str) -> Result<Allocation, TierError> {
        let mut next = self.clone();
        let node = next
            .nodes
            .iter_mut()
            .find(|n| n.node_id == dead)
            .ok_or_else(|| TierError::UnknownNode(dead.to_owned()))?;
        node.alive = false;
        Ok(next)
    }

    /// Mark `dead` not alive and move each of its tiers, keeping tier ids,
    /// to the least-loaded live host. Returns the moves made.
    pub fn replace(
        &self,
        dead: &str,
    ) -> Result<(Allocation, Vec<(TierIdentity, Placement)>), TierError> {
        let mut next = self.clone();
        let node = next
            .nodes
            .iter_mut()
            .find(|n| n.node_id == dead)
            .ok_or_else(|| TierError::UnknownNode(dead.to_owned()))?;
        node.alive = false;
        let mut moved = Vec::new();
        let orphans: Vec<(TierIdentity, String)> = next
            .on_node(dead)
            .map(|(id, p)| (id, p.tier_id.clone()))
            .collect();
        for (identity, tier_id) in orphans {
            let target = next.least_loaded(identity)?;
            let p = next
                .tiers
                .get_mut(&identity)
                .and_then(|ps| ps.iter_mut().find(|p| p.tier_id == tier_id))
                .expect("orphan placement exists");
            p.node_id = target;
            moved.push((identity, p.clone()));
        }
        Ok((next, moved))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TierIdentity::*;

    fn node(id: &str, hosted: &[TierIdentity]) -> NodeDescriptor {
        NodeDescriptor::new(
            id,
            Endpoint::local(format!("gim-test-{id}")).unwrap(),
            hosted.to_vec(),
        )
    }

    fn all() -> Vec<TierIdentity> {
        TierIdentity::ALL.to_vec()
    }

    #[test]
    fn single_node_gets_everything() {
        let a = gim_allocate(&[node("n0", &all())], &BTreeMap::from([(Dwt, 1)])).unwrap();
        assert!(a.all().all(|(_, p)| p.node_id == "n0"));
        assert_eq!(a.all().count(), 4);
    }

    #[test]
    fn replicas_spread_round_robin() {
        let topo = [
            node("a", &[Dst, Gim, Dgt]),
            node("b", &[Dwt]),
            node("c", &[Dwt]),
        ];
        let a = gim_allocate(&topo, &BTreeMap::from([(Dwt, 2)])).unwrap();
        let hosts: Vec<_> = a
            .placements(Dwt)
            .iter()
            .map(|p| p.node_id.as_str())
            .collect();
        assert_eq!(hosts, ["b", "c"]);
        assert_eq!(a.count(Dst), 1);
    }

    #[test]
    fn dst_is_always_single() {
        let topo = [node("a", &all()), node("b", &all())];
        let a = gim_allocate(&topo, &BTreeMap::from([(Dst, 3)])).unwrap();
        assert_eq!(a.count(Dst), 1);
    }

    #[test]
    fn no_dst_host() {
        let e = gim_allocate(&[node("a", &[Dwt, Dgt, Gim])], &BTreeMap::new()).unwrap_err();
        assert_eq!(e, TierError::Unsatisfiable(Dst));
    }

    #[test]
    fn tier_ids_are_unique() {
        let topo = [node("a", &all()), node("b", &all())];
        let a = gim_allocate(&topo, &BTreeMap::from([(Dwt, 3), (Dgt, 2)])).unwrap();
        let (a, _) = a.scale_out(Dwt).unwrap();
        let mut ids: Vec<_> = a.all().map(|(_, p)| p.tier_id.clone()).collect();
        let n = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn scale_out_picks_least_loaded() {
        let topo = [node("a", &all()), node("b", &[Dwt])];
        let a = gim_allocate(&topo, &BTreeMap::new()).unwrap();
        // a holds DST, GIM, DGT; b holds the DWT
        let (next, p) = a.scale_out(Dwt).unwrap();
        assert_eq!(p.node_id, "b");
        assert_eq!(next.count(Dwt), 2);
        let (next, p) = next.scale_out(Dwt).unwrap();
        assert_eq!((p.node_id.as_str(), next.count(Dwt)), ("b", 3));
    }

    #[test]
    fn replace_moves_tiers_and_keeps_ids() {
        let topo = [
            node("a", &[Dst, Gim, Dgt]),
            node("w1", &[Dwt]),
            node("w2", &[Dwt]),
        ];
        let a = gim_allocate(&topo, &BTreeMap::from([(Dwt, 2)])).unwrap();
        let before = a
            .placements(Dwt)
            .iter()
            .find(|p| p.node_id == "w2")
            .unwrap()
            .tier_id
            .clone();
        let (next, moved) = a.replace("w2").unwrap();
        assert_eq!(moved.len(), 1);
        assert_eq!(moved[0].1.tier_id, before);
        assert_ne!(moved[0].1.node_id, "w2");
        assert!(!next.node("w2").unwrap().alive);
        assert_eq!(next.count(Dwt), 2);
        assert!(next.all().all(|(_, p)| p.node_id != "w2"));
    }

    #[test]
    fn replace_without_alternative() {
        let topo = [node("a", &[Dst]), node("b", &[Gim, Dgt, Dwt])];
        let a = gim_allocate(&topo, &BTreeMap::new()).unwrap();
        assert_eq!(a.replace("a").unwrap_err(), TierError::Unsatisfiable(Dst));
        assert_eq!(
            a.replace("zz").unwrap_err(),
            TierError::UnknownNode("zz".into())
        );
    }
}
