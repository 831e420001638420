//! Cost model and site choice.
//!
//! The window estimate is a fixed closed form shared by site choice,
//! the adaptive runtime, and the reports. For a slice `s` estimated to
//! run `T` body passes (its trip estimate):
//!
//! ```text
//! est(remote site) = submit_overhead
//!                  + 2 * hops(host, site) * hop_latency
//!                  + T * |body| * near_cpi
//!                  + result_lines * line_transfer
//!                  + T * sum over body loads of access(site, owner)
//!
//! access(site, owner) = near_local                     when site owns the line
//!                       2 * hops(site, owner) * hop_latency   otherwise
//!
//! est(Host) = T * |body| * host_cpi
//!           + T * sum over body loads of 2 * hops(host, owner) * hop_latency
//! ```
//!
//! `result_lines` is the lines needed to carry the live-outs (at least
//! one). Host means "do not offload": no submit cost, no result
//! transfer, every remote load pays a full fabric round trip.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::fabric::{Topology, TopologyError};
use crate::ir::{NodeId, LINE_BYTES};

use super::slice::OffloadSlice;

/// Per-site latency and throughput parameters. `near_*` describe the
/// weak core at a switch or endpoint; the rest describe the host and
/// the fabric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostModel {
    /// Cycles to marshal and launch one slice submission.
    pub submit_overhead: u64,
    /// Cycles per fabric hop, per direction.
    pub hop_latency: u64,
    /// Cycles to move one 64-byte result line into L1.
    pub line_transfer: u64,
    /// Cycles per slice instruction on the near core.
    pub near_cpi: u64,
    /// Cycles per instruction on the host.
    pub host_cpi: u64,
    /// L1 hit latency.
    pub l1_hit: u64,
    /// Host-local memory latency on an L1 miss.
    pub local_mem: u64,
    /// Near core's latency to memory it sits next to.
    pub near_local: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            submit_overhead: 20,
            hop_latency: 150,
            line_transfer: 10,
            near_cpi: 2,
            host_cpi: 1,
            l1_hit: 2,
            local_mem: 100,
            near_local: 40,
        }
    }
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("cost model invalid: {0}")]
    Invalid(String),
}

impl CostModel {
    pub fn check(&self) -> Result<(), CostError> {
        let fields = [
            ("submit_overhead", self.submit_overhead),
            ("hop_latency", self.hop_latency),
            ("line_transfer", self.line_transfer),
            ("near_cpi", self.near_cpi),
            ("host_cpi", self.host_cpi),
            ("l1_hit", self.l1_hit),
            ("local_mem", self.local_mem),
            ("near_local", self.near_local),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(CostError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.near_cpi < self.host_cpi {
            return Err(CostError::Invalid(
                "near_cpi must be at least host_cpi (the near core is the weaker one)".into(),
            ));
        }
        Ok(())
    }

    /// Rescale the parameters calibration is allowed to touch.
    pub fn rescaled(&self, factor: f64) -> CostModel {
        let scale = |v: u64| -> u64 { ((v as f64) * factor).round().max(1.0) as u64 };
        CostModel { hop_latency: scale(self.hop_latency), near_cpi: scale(self.near_cpi), ..*self }
    }
}

/// Where a slice runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Site {
    /// Inline on the host; the slice is not offloaded.
    Host,
    Switch(NodeId),
    Endpoint(NodeId),
}

impl Site {
    pub fn node(&self) -> Option<NodeId> {
        match self {
            Site::Host => None,
            Site::Switch(n) | Site::Endpoint(n) => Some(*n),
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Host => write!(f, "host"),
            Site::Switch(n) => write!(f, "switch({})", n.0),
            Site::Endpoint(n) => write!(f, "endpoint({})", n.0),
        }
    }
}

fn result_lines(s: &OffloadSlice) -> u64 {
    ((8 * s.live_outs.len() as u64).div_ceil(LINE_BYTES)).max(1)
}

/// The closed-form window estimate described in the module docs.
pub fn estimate_window(
    s: &OffloadSlice,
    cm: &CostModel,
    topo: &Topology,
    site: Site,
) -> Result<u64, CostError> {
    let host = topo.host()?;
    let t = s.trip_factor();
    let dyn_instrs = s.est_dyn_instrs();
    match site {
        Site::Host => {
            let mut total = dyn_instrs * cm.host_cpi;
            for owner in &s.load_owners {
                total += t * 2 * topo.hops(host, *owner)? * cm.hop_latency;
            }
            Ok(total)
        }
        Site::Switch(node) | Site::Endpoint(node) => {
            if topo.kind(node).is_none() {
                return Err(CostError::Topology(TopologyError::UnknownNode(node)));
            }
            let mut total = cm.submit_overhead
                + 2 * topo.hops(host, node)? * cm.hop_latency
                + dyn_instrs * cm.near_cpi
                + result_lines(s) * cm.line_transfer;
            for owner in &s.load_owners {
                total += t * access_cost(cm, topo, node, *owner)?;
            }
            Ok(total)
        }
    }
}

/// Per-load access cost from an offload site to the line's owner.
pub fn access_cost(
    cm: &CostModel,
    topo: &Topology,
    site_node: NodeId,
    owner: NodeId,
) -> Result<u64, CostError> {
    if site_node == owner {
        Ok(cm.near_local)
    } else {
        Ok(2 * topo.hops(site_node, owner)? * cm.hop_latency)
    }
}

/// Cost of keeping the slice inline on the host; the de-offload bar.
pub fn host_inline_cost(
    s: &OffloadSlice,
    cm: &CostModel,
    topo: &Topology,
) -> Result<u64, CostError> {
    estimate_window(s, cm, topo, Site::Host)
}

/// Argmin of the window estimate over the host, every switch, and the
/// endpoints the slice touches. Ties prefer the site closest to the
/// data: endpoint, then switch, then host, smallest node id first.
pub fn choose_site(
    s: &OffloadSlice,
    cm: &CostModel,
    topo: &Topology,
) -> Result<(Site, u64), CostError> {
    let mut candidates: Vec<Site> = Vec::new();
    for e in s.touched_endpoints.iter() {
        candidates.push(Site::Endpoint(*e));
    }
    for sw in topo.switches() {
        candidates.push(Site::Switch(sw));
    }
    candidates.push(Site::Host);

    let mut best: Option<(Site, u64)> = None;
    for site in candidates {
        let est = estimate_window(s, cm, topo, site)?;
        match best {
            Some((_, b)) if est >= b => {}
            _ => best = Some((site, est)),
        }
    }
    Ok(best.expect("at least the host candidate exists"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::slice::TripCount;
    use crate::ir::{Op, Operand, Reg};
    use std::collections::BTreeSet;

    /// A hand-built straight-line chase of `loads` loads at one
    /// endpoint, one live-out.
    fn chase_slice(loads: usize) -> OffloadSlice {
        let body: Vec<Op> = (0..loads)
            .map(|_| Op::Load { dst: Reg(1), addr: Operand::Reg(Reg(1)), size: 8 })
            .collect();
        OffloadSlice {
            id: 0,
            func: 0,
            instr_indices: (0..loads).collect(),
            body,
            trip: TripCount::Once,
            live_ins: vec![Reg(1)],
            live_outs: vec![Reg(1)],
            touched_endpoints: BTreeSet::from([NodeId(2)]),
            load_owners: vec![NodeId(2); loads],
            anchor_index: 0,
            anchor_label: u32::MAX,
            site: Site::Host,
            est_window: 0,
            est_trip: 1,
            loop_range: None,
        }
    }

    #[test]
    fn empty_degenerate_slice_costs_submit_plus_round_trip() {
        let mut s = chase_slice(0);
        s.live_outs.clear();
        s.load_owners.clear();
        let topo = Topology::builtin_direct(); // one hop host->endpoint
        let cm = CostModel::default();
        let est = estimate_window(&s, &cm, &topo, Site::Endpoint(NodeId(2))).unwrap();
        // submit + 2*1*hop + 0 compute + 1 result line (floor) * transfer
        assert_eq!(est, 20 + 2 * 150 + 10);
    }

    #[test]
    fn three_load_chase_at_endpoint_matches_hand_arithmetic() {
        let s = chase_slice(3);
        let topo = Topology::builtin_line(); // two hops host->endpoint
        let cm = CostModel { line_transfer: 10, ..Default::default() };
        let est = estimate_window(&s, &cm, &topo, Site::Endpoint(NodeId(2))).unwrap();
        // 20 + 2*2*150 + 3*2 + 3*40 + 1*10 = 756
        assert_eq!(est, 756);
    }

    #[test]
    fn same_chase_at_host_is_dominated_by_round_trips() {
        let s = chase_slice(3);
        let topo = Topology::builtin_line();
        let cm = CostModel::default();
        let est = estimate_window(&s, &cm, &topo, Site::Host).unwrap();
        assert_eq!(est, 3 * 1 + 3 * 600);
        assert!(est > 1800);
    }

    #[test]
    fn chooser_matches_brute_force_argmin() {
        let s = chase_slice(3);
        let topo = Topology::builtin_two_endpoint();
        let cm = CostModel::default();
        let (site, est) = choose_site(&s, &cm, &topo).unwrap();
        // Brute force over all sites.
        let mut all = vec![Site::Host];
        for sw in topo.switches() {
            all.push(Site::Switch(sw));
        }
        for e in s.touched_endpoints.iter() {
            all.push(Site::Endpoint(*e));
        }
        let best = all
            .iter()
            .map(|x| (estimate_window(&s, &cm, &topo, *x).unwrap(), *x))
            .min_by_key(|(c, _)| *c)
            .unwrap();
        assert_eq!(est, best.0);
        assert_eq!(est, estimate_window(&s, &cm, &topo, site).unwrap());
    }

    #[test]
    fn slice_touching_two_endpoints_lands_on_the_switch() {
        let mut s = chase_slice(2);
        s.touched_endpoints = BTreeSet::from([NodeId(2), NodeId(3)]);
        s.load_owners = vec![NodeId(2), NodeId(3)];
        s.live_outs = vec![Reg(1), Reg(2)];
        let topo = Topology::builtin_two_endpoint();
        let cm = CostModel::default();
        let (site, _) = choose_site(&s, &cm, &topo).unwrap();
        assert_eq!(site, Site::Switch(NodeId(1)));
    }

    #[test]
    fn hostile_fabric_pushes_the_choice_home() {
        let s = chase_slice(1);
        let topo = Topology::builtin_line();
        // Make the near core absurdly slow so staying home wins.
        let cm = CostModel { near_cpi: 5000, near_local: 5000, ..Default::default() };
        let (site, _) = choose_site(&s, &cm, &topo).unwrap();
        assert_eq!(site, Site::Host);
    }

    #[test]
    fn cost_monotone_in_hop_latency_cpi_and_length() {
        let topo = Topology::builtin_line();
        let base = CostModel::default();
        let s = chase_slice(3);
        let site = Site::Endpoint(NodeId(2));
        let e0 = estimate_window(&s, &base, &topo, site).unwrap();
        let slower_fabric = CostModel { hop_latency: 151, ..base };
        assert!(estimate_window(&s, &slower_fabric, &topo, site).unwrap() > e0);
        let slower_core = CostModel { near_cpi: 3, ..base };
        assert!(estimate_window(&s, &slower_core, &topo, site).unwrap() > e0);
        let longer = chase_slice(4);
        assert!(estimate_window(&longer, &base, &topo, site).unwrap() > e0);
    }

    #[test]
    fn unreachable_site_names_the_node() {
        let s = chase_slice(1);
        let topo = Topology::builtin_line();
        let cm = CostModel::default();
        let err = estimate_window(&s, &cm, &topo, Site::Endpoint(NodeId(9))).unwrap_err();
        assert!(err.to_string().contains("n9"), "{err}");
    }

    #[test]
    fn weaker_core_invariant_enforced() {
        let cm = CostModel { near_cpi: 1, host_cpi: 2, ..Default::default() };
        assert!(cm.check().is_err());
    }
}
