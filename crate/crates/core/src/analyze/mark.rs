//! Address-space marking: forward dataflow over pointer provenance.
//!
//! The provenance lattice is Bottom < {Local, Remote(e)} < Unknown,
//! joined pointwise at control merges. Constants resolve through the
//! region map. Additive arithmetic preserves a base pointer's
//! provenance (base plus offset); multiplication yields Bottom, which
//! is what lets scaled indices recombine with a remote base without
//! poisoning it. Values loaded from a region inherit that region's
//! space, treating regions as self-contained pointer pools.

use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{
    AddressSpace, Function, NodeId, Op, Operand, Program, Reg, SpaceAnnotation,
};

/// Disjoint address ranges with their spaces, derived from the
/// program's region declarations.
#[derive(Debug, Clone, Default)]
pub struct RegionMap {
    entries: Vec<(u64, u64, AddressSpace)>,
}

impl RegionMap {
    pub fn from_program(p: &Program) -> Self {
        let mut entries: Vec<(u64, u64, AddressSpace)> =
            p.regions.iter().map(|r| (r.base, r.end(), r.space)).collect();
        entries.sort_by_key(|e| e.0);
        RegionMap { entries }
    }

    pub fn lookup(&self, addr: u64) -> Option<AddressSpace> {
        self.entries
            .iter()
            .find(|(base, end, _)| addr >= *base && addr < *end)
            .map(|(_, _, s)| *s)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Pointer provenance of a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Prov {
    #[default]
    Bottom,
    Local,
    Remote(NodeId),
    Unknown,
}

impl Prov {
    pub fn join(self, other: Prov) -> Prov {
        use Prov::*;
        match (self, other) {
            (Bottom, x) | (x, Bottom) => x,
            (Unknown, _) | (_, Unknown) => Unknown,
            (Local, Local) => Local,
            (Remote(a), Remote(b)) if a == b => Remote(a),
            _ => Unknown,
        }
    }

    fn from_space(s: AddressSpace) -> Prov {
        match s {
            AddressSpace::Local => Prov::Local,
            AddressSpace::Remote(n) => Prov::Remote(n),
        }
    }

    fn to_annotation(self) -> SpaceAnnotation {
        match self {
            Prov::Local => SpaceAnnotation::Local,
            Prov::Remote(n) => SpaceAnnotation::Remote(n),
            Prov::Bottom | Prov::Unknown => SpaceAnnotation::Unknown,
        }
    }
}

type ProvMap = BTreeMap<Reg, Prov>;

fn join_maps(into: &mut ProvMap, from: &ProvMap) -> bool {
    let mut changed = false;
    for (r, p) in from {
        let cur = into.get(r).copied().unwrap_or(Prov::Bottom);
        let joined = cur.join(*p);
        if joined != cur {
            into.insert(*r, joined);
            changed = true;
        }
    }
    changed
}

struct FnFacts {
    /// Provenance joined over every call site, per parameter.
    params: ProvMap,
    /// Join of all `ret` operand provenances.
    ret: Prov,
    /// True when any call site passed a Remote or Unknown argument.
    received_remote: bool,
}

/// Mark every load and store with the provenance of its address.
/// Intraprocedural: parameters are treated as unknown-origin values
/// (Bottom) until `propagate_remote_pointers` refines them.
pub fn mark_remotable(p: &Program, rm: &RegionMap) -> Program {
    let mut out = p.clone();
    run_marking(&mut out, rm, false);
    out
}

/// Interprocedural closure: pushes call-argument provenance into
/// callees (and return provenance back) to a least fixpoint, updating
/// annotations, and returns the functions that were handed a remote
/// pointer through any call argument.
pub fn propagate_remote_pointers(p: &mut Program) -> BTreeSet<String> {
    let rm = RegionMap::from_program(p);
    run_marking(p, &rm, true)
}

fn run_marking(p: &mut Program, rm: &RegionMap, interprocedural: bool) -> BTreeSet<String> {
    let mut facts: BTreeMap<String, FnFacts> = p
        .functions
        .iter()
        .map(|f| {
            (
                f.name.clone(),
                FnFacts { params: ProvMap::new(), ret: Prov::Bottom, received_remote: false },
            )
        })
        .collect();

    // Whole-program fixpoint: function summaries (param and return
    // provenance) feed each other through call sites.
    loop {
        let mut changed = false;
        for f in &p.functions {
            let entry: ProvMap = if interprocedural {
                f.params
                    .iter()
                    .map(|r| {
                        (*r, facts[&f.name].params.get(r).copied().unwrap_or(Prov::Bottom))
                    })
                    .collect()
            } else {
                f.params.iter().map(|r| (*r, Prov::Bottom)).collect()
            };
            let summary = analyze_function(f, rm, &entry, &facts);
            let fact = facts.get_mut(&f.name).expect("fact");
            if fact.ret != fact.ret.join(summary.ret) {
                fact.ret = fact.ret.join(summary.ret);
                changed = true;
            }
            if interprocedural {
                for (callee, args, any_remote) in &summary.calls {
                    if let Some(cf) = facts.get_mut(callee) {
                        if *any_remote && !cf.received_remote {
                            cf.received_remote = true;
                            changed = true;
                        }
                        let callee_params: Vec<Reg> =
                            p.function(callee).map(|f| f.params.clone()).unwrap_or_default();
                        for (param, prov) in callee_params.iter().zip(args) {
                            let cur = cf.params.get(param).copied().unwrap_or(Prov::Bottom);
                            let joined = cur.join(*prov);
                            if joined != cur {
                                cf.params.insert(*param, joined);
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    // Final pass writes the annotations.
    for fi in 0..p.functions.len() {
        let f = &p.functions[fi];
        let entry: ProvMap = if interprocedural {
            f.params
                .iter()
                .map(|r| (*r, facts[&f.name].params.get(r).copied().unwrap_or(Prov::Bottom)))
                .collect()
        } else {
            f.params.iter().map(|r| (*r, Prov::Bottom)).collect()
        };
        let summary = analyze_function(f, rm, &entry, &facts);
        let f = &mut p.functions[fi];
        for (i, ann) in summary.annotations {
            f.body[i].space = ann;
        }
    }

    facts
        .iter()
        .filter(|(_, fact)| fact.received_remote)
        .map(|(name, _)| name.clone())
        .collect()
}

struct FnSummary {
    annotations: Vec<(usize, SpaceAnnotation)>,
    ret: Prov,
    /// (callee, per-arg provenance, any arg remote-or-unknown)
    calls: Vec<(String, Vec<Prov>, bool)>,
}

fn analyze_function(
    f: &Function,
    rm: &RegionMap,
    entry: &ProvMap,
    facts: &BTreeMap<String, FnFacts>,
) -> FnSummary {
    let n = f.body.len();
    let mut in_states: Vec<Option<ProvMap>> = vec![None; n];
    if n > 0 {
        in_states[0] = Some(entry.clone());
    }

    let operand_prov = |state: &ProvMap, o: &Operand| -> Prov {
        match o {
            Operand::Reg(r) => state.get(r).copied().unwrap_or(Prov::Bottom),
            Operand::Imm(i) => {
                rm.lookup(*i as u64).map(Prov::from_space).unwrap_or(Prov::Bottom)
            }
        }
    };

    let mut work: Vec<usize> = if n > 0 { vec![0] } else { vec![] };
    while let Some(i) = work.pop() {
        let Some(state) = in_states[i].clone() else { continue };
        let mut out = state.clone();
        let inst = &f.body[i];
        match &inst.op {
            Op::Const { dst, imm } => {
                out.insert(*dst, operand_prov(&out, &Operand::Imm(*imm)));
            }
            Op::Add { dst, a, b } => {
                let v = operand_prov(&out, a).join(operand_prov(&out, b));
                out.insert(*dst, v);
            }
            Op::Mul { dst, .. } | Op::Cmp { dst, .. } => {
                // Scaled or boolean results are offsets, not pointers.
                out.insert(*dst, Prov::Bottom);
            }
            Op::Load { dst, addr, .. } => {
                let a = operand_prov(&out, addr);
                out.insert(
                    *dst,
                    match a {
                        Prov::Local => Prov::Local,
                        Prov::Remote(e) => Prov::Remote(e),
                        Prov::Bottom | Prov::Unknown => Prov::Unknown,
                    },
                );
            }
            Op::Store { .. } => {}
            Op::Call { dst, func, .. } => {
                if let Some(d) = dst {
                    let ret = facts.get(func).map(|s| s.ret).unwrap_or(Prov::Unknown);
                    out.insert(*d, ret);
                }
            }
            Op::AwaitMailbox { dsts, .. } => {
                for d in dsts {
                    out.insert(*d, Prov::Unknown);
                }
            }
            _ => {}
        }
        for s in successors_of(f, i) {
            let push = match &mut in_states[s] {
                slot @ None => {
                    *slot = Some(out.clone());
                    true
                }
                Some(cur) => join_maps(cur, &out),
            };
            if push {
                work.push(s);
            }
        }
    }

    let mut annotations = Vec::new();
    let mut ret = Prov::Bottom;
    let mut calls = Vec::new();
    for i in 0..n {
        let Some(state) = &in_states[i] else { continue };
        match &f.body[i].op {
            Op::Load { addr, .. } | Op::Store { addr, .. } => {
                annotations.push((i, operand_prov(state, addr).to_annotation()));
            }
            Op::Ret { val: Some(v) } => {
                ret = ret.join(operand_prov(state, v));
            }
            Op::Call { func, args, .. } => {
                let provs: Vec<Prov> = args.iter().map(|a| operand_prov(state, a)).collect();
                let any_remote =
                    provs.iter().any(|p| matches!(p, Prov::Remote(_) | Prov::Unknown));
                calls.push((func.clone(), provs, any_remote));
            }
            _ => {}
        }
    }
    FnSummary { annotations, ret, calls }
}

pub(crate) fn successors_of(f: &Function, i: usize) -> Vec<usize> {
    match &f.body[i].op {
        Op::Ret { .. } => Vec::new(),
        Op::Jump { target } => f.labels.get(target).map(|t| vec![*t]).unwrap_or_default(),
        Op::Branch { target, .. } => {
            let mut s = Vec::new();
            if i + 1 < f.body.len() {
                s.push(i + 1);
            }
            if let Some(t) = f.labels.get(target) {
                s.push(*t);
            }
            s
        }
        _ => {
            if i + 1 < f.body.len() {
                vec![i + 1]
            } else {
                Vec::new()
            }
        }
    }
}
