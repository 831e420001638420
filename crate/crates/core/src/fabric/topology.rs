//! Fabric graph: nodes, edges with per-direction latency and bandwidth,
//! and endpoint memory ownership. Routing is shortest-path by hop
//! count with ties broken toward the smallest node-id sequence, so it
//! is deterministic for a fixed topology.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::ir::{AddressSpace, NodeId, RegionDecl};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    HostRc,
    Switch,
    Endpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub to: NodeId,
    pub latency: u64,
    pub bandwidth: u64,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("node {0} is not in the topology")]
    UnknownNode(NodeId),
    #[error("nodes {0} and {1} are disconnected")]
    Disconnected(NodeId, NodeId),
    #[error("topology has no host root complex")]
    NoHost,
    #[error("topology has {0} host root complexes, expected exactly one")]
    MultipleHosts(usize),
    #[error("region '{region}' is remote to {node} which is not an endpoint")]
    NotAnEndpoint { region: String, node: NodeId },
    #[error("region '{region}' is not covered by {node}'s owned ranges")]
    NotOwned { region: String, node: NodeId },
    #[error("topology is not connected")]
    NotConnected,
}

#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeKind>,
    adj: BTreeMap<NodeId, Vec<Edge>>,
    /// Optional explicit ownership ranges: (base, len, endpoint). When
    /// empty, an endpoint owns whatever regions name it.
    pub ownership: Vec<(u64, u64, NodeId)>,
}

impl Topology {
    pub fn new() -> Self {
        Topology::default()
    }

    pub fn add_node(&mut self, id: NodeId, kind: NodeKind) {
        self.nodes.insert(id, kind);
        self.adj.entry(id).or_default();
    }

    pub fn add_edge(&mut self, a: NodeId, b: NodeId, latency: u64, bandwidth: u64) {
        self.adj.entry(a).or_default().push(Edge { to: b, latency, bandwidth });
        self.adj.entry(b).or_default().push(Edge { to: a, latency, bandwidth });
        for edges in [self.adj.get_mut(&a).unwrap(), self.adj.get_mut(&b).unwrap()] {
            edges.sort_by_key(|e| e.to);
        }
    }

    pub fn kind(&self, id: NodeId) -> Option<NodeKind> {
        self.nodes.get(&id).copied()
    }

    pub fn host(&self) -> Result<NodeId, TopologyError> {
        let hosts: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(_, k)| **k == NodeKind::HostRc)
            .map(|(id, _)| *id)
            .collect();
        match hosts.len() {
            0 => Err(TopologyError::NoHost),
            1 => Ok(hosts[0]),
            n => Err(TopologyError::MultipleHosts(n)),
        }
    }

    pub fn switches(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, k)| **k == NodeKind::Switch)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn endpoints(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, k)| **k == NodeKind::Endpoint)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, NodeKind)> + '_ {
        self.nodes.iter().map(|(id, k)| (*id, *k))
    }

    /// Shortest path from `src` to `dst` as an ordered edge list.
    /// Empty for `src == dst`.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<Vec<Edge>, TopologyError> {
        if !self.nodes.contains_key(&src) {
            return Err(TopologyError::UnknownNode(src));
        }
        if !self.nodes.contains_key(&dst) {
            return Err(TopologyError::UnknownNode(dst));
        }
        if src == dst {
            return Ok(Vec::new());
        }
        // BFS visiting neighbors in ascending node id: the first path
        // found is the lexicographically smallest shortest path.
        let mut prev: BTreeMap<NodeId, (NodeId, Edge)> = BTreeMap::new();
        let mut queue = VecDeque::new();
        queue.push_back(src);
        while let Some(n) = queue.pop_front() {
            if n == dst {
                break;
            }
            for e in &self.adj[&n] {
                if e.to != src && !prev.contains_key(&e.to) {
                    prev.insert(e.to, (n, *e));
                    queue.push_back(e.to);
                }
            }
        }
        let mut path = Vec::new();
        let mut cur = dst;
        while cur != src {
            let (p, e) = prev.get(&cur).ok_or(TopologyError::Disconnected(src, dst))?;
            path.push(*e);
            cur = *p;
        }
        path.reverse();
        Ok(path)
    }

    pub fn hops(&self, src: NodeId, dst: NodeId) -> Result<u64, TopologyError> {
        Ok(self.route(src, dst)?.len() as u64)
    }

    /// Sum of hop latencies along the route.
    pub fn path_latency(&self, src: NodeId, dst: NodeId) -> Result<u64, TopologyError> {
        Ok(self.route(src, dst)?.iter().map(|e| e.latency).sum())
    }

    /// Bottleneck bandwidth along the route; None for self-delivery.
    pub fn path_bandwidth(&self, src: NodeId, dst: NodeId) -> Result<Option<u64>, TopologyError> {
        let route = self.route(src, dst)?;
        Ok(route.iter().map(|e| e.bandwidth).min())
    }

    /// Structural invariants: one host, connected graph.
    pub fn check(&self) -> Result<(), TopologyError> {
        let host = self.host()?;
        for (id, _) in self.nodes() {
            if self.route(host, id).is_err() {
                return Err(TopologyError::NotConnected);
            }
        }
        Ok(())
    }

    /// Every remote region must name an endpoint node; when explicit
    /// ownership ranges exist they must cover the region.
    pub fn check_regions(&self, regions: &[RegionDecl]) -> Result<(), TopologyError> {
        for r in regions {
            if let AddressSpace::Remote(node) = r.space {
                if self.kind(node) != Some(NodeKind::Endpoint) {
                    return Err(TopologyError::NotAnEndpoint { region: r.name.clone(), node });
                }
                if !self.ownership.is_empty() {
                    let covered = self.ownership.iter().any(|(base, len, owner)| {
                        *owner == node && r.base >= *base && r.end() <= base + len
                    });
                    if !covered {
                        return Err(TopologyError::NotOwned { region: r.name.clone(), node });
                    }
                }
            }
        }
        Ok(())
    }

    /// Host - switch - endpoint line with 150-cycle hops at 8 B/cycle:
    /// a 600-cycle round trip from host to endpoint memory.
    pub fn builtin_line() -> Topology {
        let mut t = Topology::new();
        t.add_node(NodeId(0), NodeKind::HostRc);
        t.add_node(NodeId(1), NodeKind::Switch);
        t.add_node(NodeId(2), NodeKind::Endpoint);
        t.add_edge(NodeId(0), NodeId(1), 150, 8);
        t.add_edge(NodeId(1), NodeId(2), 150, 8);
        t
    }

    /// Two endpoints behind one switch.
    pub fn builtin_two_endpoint() -> Topology {
        let mut t = Topology::builtin_line();
        t.add_node(NodeId(3), NodeKind::Endpoint);
        t.add_edge(NodeId(1), NodeId(3), 150, 8);
        t
    }

    /// Host wired straight to a single endpoint (node 2, so that the
    /// default workload space works unchanged).
    pub fn builtin_direct() -> Topology {
        let mut t = Topology::new();
        t.add_node(NodeId(0), NodeKind::HostRc);
        t.add_node(NodeId(2), NodeKind::Endpoint);
        t.add_edge(NodeId(0), NodeId(2), 300, 8);
        t
    }

    pub fn builtin(name: &str) -> Option<Topology> {
        match name {
            "line" => Some(Topology::builtin_line()),
            "two_endpoint" => Some(Topology::builtin_two_endpoint()),
            "direct" => Some(Topology::builtin_direct()),
            _ => None,
        }
    }
}

/// Parse the text topology format: `node <id> <hostrc|switch|endpoint>`,
/// `edge <a> <b> <latency> <bandwidth>`, `owns <endpoint> <base> <len>`.
pub fn parse_topology(text: &str) -> Result<Topology, Vec<crate::ir::Diagnostic>> {
    use crate::ir::Diagnostic;
    let mut t = Topology::new();
    let mut diags = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = (idx + 1) as u32;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["node", id, kind] => {
                let id = match id.parse::<u32>() {
                    Ok(v) => NodeId(v),
                    Err(_) => {
                        diags.push(Diagnostic::new(lineno, format!("malformed node id '{id}'")));
                        continue;
                    }
                };
                let kind = match *kind {
                    "hostrc" => NodeKind::HostRc,
                    "switch" => NodeKind::Switch,
                    "endpoint" => NodeKind::Endpoint,
                    other => {
                        diags.push(Diagnostic::new(lineno, format!("unknown node kind '{other}'")));
                        continue;
                    }
                };
                t.add_node(id, kind);
            }
            ["edge", a, b, lat, bw] => {
                match (a.parse::<u32>(), b.parse::<u32>(), lat.parse::<u64>(), bw.parse::<u64>()) {
                    (Ok(a), Ok(b), Ok(lat), Ok(bw)) if bw > 0 => {
                        t.add_edge(NodeId(a), NodeId(b), lat, bw)
                    }
                    _ => diags.push(Diagnostic::new(lineno, "malformed edge line".to_string())),
                }
            }
            ["owns", ep, base, len] => {
                match (ep.parse::<u32>(), parse_num(base), parse_num(len)) {
                    (Ok(ep), Some(base), Some(len)) => t.ownership.push((base, len, NodeId(ep))),
                    _ => diags.push(Diagnostic::new(lineno, "malformed owns line".to_string())),
                }
            }
            _ => diags.push(Diagnostic::new(lineno, format!("unrecognized topology line '{line}'"))),
        }
    }
    if diags.is_empty() {
        Ok(t)
    } else {
        Err(diags)
    }
}

fn parse_num(tok: &str) -> Option<u64> {
    if let Some(hex) = tok.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()
    } else {
        tok.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn route_to_self_is_empty() {
        let t = Topology::builtin_line();
        assert!(t.route(NodeId(0), NodeId(0)).unwrap().is_empty());
    }

    #[test]
    fn line_host_to_endpoint_is_two_edges() {
        let t = Topology::builtin_line();
        let r = t.route(NodeId(0), NodeId(2)).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(t.path_latency(NodeId(0), NodeId(2)).unwrap(), 300);
    }

    #[test]
    fn absent_node_is_an_error() {
        let t = Topology::builtin_line();
        assert!(matches!(t.route(NodeId(0), NodeId(9)), Err(TopologyError::UnknownNode(_))));
    }

    #[test]
    fn disconnected_pair_names_both_nodes() {
        let mut t = Topology::builtin_line();
        t.add_node(NodeId(7), NodeKind::Endpoint);
        match t.route(NodeId(0), NodeId(7)) {
            Err(TopologyError::Disconnected(a, b)) => {
                assert_eq!((a, b), (NodeId(0), NodeId(7)));
            }
            other => panic!("expected disconnected, got {other:?}"),
        }
    }

    #[test]
    fn tie_break_prefers_smaller_node_ids() {
        // Two equal-length paths 0->1->3 and 0->2->3; expect via 1.
        let mut t = Topology::new();
        t.add_node(NodeId(0), NodeKind::HostRc);
        t.add_node(NodeId(1), NodeKind::Switch);
        t.add_node(NodeId(2), NodeKind::Switch);
        t.add_node(NodeId(3), NodeKind::Endpoint);
        t.add_edge(NodeId(0), NodeId(1), 10, 8);
        t.add_edge(NodeId(0), NodeId(2), 10, 8);
        t.add_edge(NodeId(1), NodeId(3), 10, 8);
        t.add_edge(NodeId(2), NodeId(3), 10, 8);
        let r = t.route(NodeId(0), NodeId(3)).unwrap();
        assert_eq!(r[0].to, NodeId(1));
    }

    #[test]
    fn parse_round() {
        let text = "node 0 hostrc\nnode 1 switch\nnode 2 endpoint\nedge 0 1 150 8\nedge 1 2 150 8\nowns 2 0x100000 4096\n";
        let t = parse_topology(text).unwrap();
        assert_eq!(t.hops(NodeId(0), NodeId(2)).unwrap(), 2);
        assert_eq!(t.ownership.len(), 1);
        t.check().unwrap();
    }
}
