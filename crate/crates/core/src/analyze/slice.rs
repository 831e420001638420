//! Offload slice extraction.
//!
//! A slice is a dependence-closed set of instructions around remote
//! loads, detached into a straight-line body a near core can run. Two
//! shapes exist:
//!
//! * counted-loop slices: a loop of the form `label L; ...body...;
//!   t = add t, -1; branch t, L` whose memory traffic is all remote.
//!   The whole loop ships as one submission; the counter's runtime
//!   value gives the iteration count, so a single round trip covers
//!   the entire chain no matter how long it runs.
//! * straight-line slices: maximal chains of data-dependent remote
//!   loads plus their address arithmetic, optionally batched with
//!   independent neighbors.
//!
//! Accesses marked Unknown are never sliced; local loads cut a chain
//! (their value becomes a live-in computed by the host).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::analyze::cost::Site;
use crate::ir::{
    MemoryImage, NodeId, Op, Operand, Reg, SpaceAnnotation, Program, LINE_BYTES,
};

/// How often a slice body runs per submission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TripCount {
    Once,
    /// The body repeats as many times as the runtime value of this
    /// live-in counter register (which the body itself decrements).
    Counted { counter: Reg },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffloadSlice {
    pub id: u32,
    /// Index of the function the slice was extracted from.
    pub func: usize,
    /// Body indices (in that function) the slice absorbs.
    pub instr_indices: Vec<usize>,
    /// Detached executable body, straight-line, in program order.
    pub body: Vec<Op>,
    pub trip: TripCount,
    pub live_ins: Vec<Reg>,
    pub live_outs: Vec<Reg>,
    pub touched_endpoints: BTreeSet<NodeId>,
    /// Owning endpoint of each body load, in body order.
    pub load_owners: Vec<NodeId>,
    /// Instruction index the profile label anchors to.
    pub anchor_index: usize,
    /// Profile label id; assigned by label insertion.
    pub anchor_label: u32,
    pub site: Site,
    pub est_window: u64,
    /// Trip estimate behind `est_window` (const-propagated counter
    /// start when visible, otherwise the configured guess).
    pub est_trip: u64,
    /// For counted slices: (head label index, backedge branch index).
    pub loop_range: Option<(usize, usize)>,
}

impl OffloadSlice {
    /// Dynamic instruction count per submission under the estimate.
    pub fn est_dyn_instrs(&self) -> u64 {
        self.trip_factor() * self.body.len() as u64
    }

    pub fn trip_factor(&self) -> u64 {
        match self.trip {
            TripCount::Once => 1,
            TripCount::Counted { .. } => self.est_trip.max(1),
        }
    }

    /// Runtime iteration count for a submission with these live-ins.
    pub fn trip_value(&self, live_in_values: &[u64]) -> u64 {
        match self.trip {
            TripCount::Once => 1,
            TripCount::Counted { counter } => {
                let pos = self
                    .live_ins
                    .iter()
                    .position(|r| *r == counter)
                    .expect("counter is a live-in");
                live_in_values[pos]
            }
        }
    }

    /// Structural closure check: every operand of every body op is a
    /// live-in or defined earlier in the body (loop-carried defs count,
    /// since those registers are live-ins too).
    pub fn is_dependence_closed(&self) -> bool {
        let mut defined: BTreeSet<Reg> = self.live_ins.iter().copied().collect();
        for op in &self.body {
            for s in op.srcs() {
                if !defined.contains(&s) {
                    return false;
                }
            }
            for d in op.dsts() {
                defined.insert(d);
            }
        }
        true
    }
}

/// Functional outcome of executing a slice body.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SliceRun {
    pub outs: Vec<u64>,
    /// (address, value) per load, in execution order.
    pub loads: Vec<(u64, u64)>,
    pub stores: Vec<(u64, Vec<u8>)>,
    /// Distinct lines loaded, newest first.
    pub lines_loaded: Vec<u64>,
    pub dyn_instrs: u64,
    pub dyn_loads: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SliceTrap {
    #[error("slice touched unmapped address {addr:#x}")]
    Unmapped { addr: u64 },
    #[error("slice access at {addr:#x} size {size} straddles a line")]
    Straddle { addr: u64, size: u8 },
    #[error("slice exceeded its step budget")]
    Budget,
}

const SLICE_STEP_BUDGET: u64 = 100_000_000;

impl OffloadSlice {
    /// Execute the body `trip` times against `mem`. This is the single
    /// functional definition of slice semantics; the near-core timing
    /// model layers cycle accounting on top of the returned counts.
    pub fn execute(
        &self,
        live_in_values: &[u64],
        mem: &mut MemoryImage,
    ) -> Result<SliceRun, SliceTrap> {
        let trips = self.trip_value(live_in_values);
        if trips.saturating_mul(self.body.len() as u64) > SLICE_STEP_BUDGET {
            return Err(SliceTrap::Budget);
        }
        let mut regs: HashMap<Reg, u64> = self
            .live_ins
            .iter()
            .copied()
            .zip(live_in_values.iter().copied())
            .collect();
        let mut run = SliceRun::default();
        let eval = |regs: &HashMap<Reg, u64>, o: &Operand| -> u64 {
            match o {
                Operand::Reg(r) => *regs.get(r).unwrap_or(&0),
                Operand::Imm(i) => *i as u64,
            }
        };
        for _ in 0..trips {
            for op in &self.body {
                run.dyn_instrs += 1;
                match op {
                    Op::Const { dst, imm } => {
                        regs.insert(*dst, *imm as u64);
                    }
                    Op::Add { dst, a, b } => {
                        let v = eval(&regs, a).wrapping_add(eval(&regs, b));
                        regs.insert(*dst, v);
                    }
                    Op::Mul { dst, a, b } => {
                        let v = eval(&regs, a).wrapping_mul(eval(&regs, b));
                        regs.insert(*dst, v);
                    }
                    Op::Cmp { dst, pred, a, b } => {
                        let v = pred.eval(eval(&regs, a), eval(&regs, b));
                        regs.insert(*dst, v);
                    }
                    Op::Load { dst, addr, size } => {
                        let a = eval(&regs, addr);
                        let v = mem.read_value(a, *size).map_err(|e| match e {
                            crate::ir::image::ImageError::OutOfRegion { addr } => {
                                SliceTrap::Unmapped { addr }
                            }
                            crate::ir::image::ImageError::Straddle { addr, size } => {
                                SliceTrap::Straddle { addr, size }
                            }
                        })?;
                        run.loads.push((a, v));
                        run.dyn_loads += 1;
                        regs.insert(*dst, v);
                    }
                    Op::Store { addr, src, size } => {
                        let a = eval(&regs, addr);
                        let v = eval(&regs, src);
                        mem.write_value(a, v, *size).map_err(|e| match e {
                            crate::ir::image::ImageError::OutOfRegion { addr } => {
                                SliceTrap::Unmapped { addr }
                            }
                            crate::ir::image::ImageError::Straddle { addr, size } => {
                                SliceTrap::Straddle { addr, size }
                            }
                        })?;
                        let mut bytes = vec![0u8; *size as usize];
                        let n = (*size as usize).min(8);
                        bytes[..n].copy_from_slice(&v.to_le_bytes()[..n]);
                        run.stores.push((a, bytes));
                    }
                    // Extraction never places control or offload ops
                    // in a body.
                    other => unreachable!("control op in slice body: {other:?}"),
                }
            }
        }
        run.outs = self.live_outs.iter().map(|r| *regs.get(r).unwrap_or(&0)).collect();
        let mut seen = BTreeSet::new();
        for (addr, _) in run.loads.iter().rev() {
            let line = addr & !(LINE_BYTES - 1);
            if seen.insert(line) {
                run.lines_loaded.push(line);
            }
        }
        Ok(run)
    }
}

/// Slice extraction knobs.
#[derive(Debug, Clone, Copy)]
pub struct SliceOptions {
    pub batching: bool,
    pub max_slice_len: usize,
    pub trip_guess: u64,
}

impl Default for SliceOptions {
    fn default() -> Self {
        SliceOptions { batching: true, max_slice_len: 64, trip_guess: 16 }
    }
}

/// A recognized counted loop.
#[derive(Debug, Clone, Copy)]
struct CountedLoop {
    head: usize,
    back: usize,
    counter: Reg,
}

/// Extract every offloadable slice from a marked program. Sites and
/// windows are left for the cost model to fill in.
pub fn extract_slices(p: &Program, opts: &SliceOptions) -> Vec<OffloadSlice> {
    let mut slices = Vec::new();
    let mut next_id = 0u32;
    for (fi, f) in p.functions.iter().enumerate() {
        let loops = find_counted_loops(f);
        let mut occupied = vec![false; f.body.len()];
        for l in &loops {
            for i in l.head..=l.back {
                occupied[i] = true;
            }
        }
        for l in &loops {
            if let Some(mut s) = extract_loop_slice(p, fi, l, opts) {
                s.id = next_id;
                next_id += 1;
                slices.push(s);
            }
        }
        for mut s in extract_straight_slices(p, fi, &occupied, opts) {
            s.id = next_id;
            next_id += 1;
            slices.push(s);
        }
    }
    slices
}

/// Recognize `label L; <straight-line body>; c = add c, -1; branch c, L`
/// where the head label has no other predecessors and the counter has
/// exactly one in-loop definition.
fn find_counted_loops(f: &crate::ir::Function) -> Vec<CountedLoop> {
    let mut loops = Vec::new();
    for (i, inst) in f.body.iter().enumerate() {
        let Op::Branch { cond, target } = &inst.op else { continue };
        let Some(&head) = f.labels.get(target) else { continue };
        if head >= i {
            continue;
        }
        let inner = &f.body[head + 1..i];
        let straight = inner.iter().all(|x| {
            !matches!(
                x.op,
                Op::Label { .. }
                    | Op::Branch { .. }
                    | Op::Jump { .. }
                    | Op::Call { .. }
                    | Op::Ret { .. }
                    | Op::SubmitSlice { .. }
                    | Op::AwaitMailbox { .. }
            )
        });
        if !straight {
            continue;
        }
        // No other jumps to the head label.
        let sole_backedge = f.body.iter().enumerate().all(|(j, x)| {
            j == i
                || !matches!(&x.op,
                    Op::Branch { target: t, .. } | Op::Jump { target: t } if t == target)
        });
        if !sole_backedge {
            continue;
        }
        let counter_defs: Vec<usize> = (head + 1..i)
            .filter(|j| f.body[*j].op.dsts().contains(cond))
            .collect();
        let [def] = counter_defs.as_slice() else { continue };
        let is_countdown = matches!(
            &f.body[*def].op,
            Op::Add { dst, a: Operand::Reg(a), b: Operand::Imm(-1) } if dst == cond && a == cond
        );
        if !is_countdown {
            continue;
        }
        loops.push(CountedLoop { head, back: i, counter: *cond });
    }
    loops
}

fn endpoint_of(ann: SpaceAnnotation) -> Option<NodeId> {
    match ann {
        SpaceAnnotation::Remote(e) => Some(e),
        _ => None,
    }
}

fn extract_loop_slice(
    p: &Program,
    fi: usize,
    l: &CountedLoop,
    opts: &SliceOptions,
) -> Option<OffloadSlice> {
    let f = &p.functions[fi];
    let range: Vec<usize> = (l.head + 1..l.back).collect();

    let mut in_slice: BTreeSet<usize> = BTreeSet::new();
    let mut has_remote_load = false;
    for &i in &range {
        let inst = &f.body[i];
        if inst.op.is_memory() {
            match endpoint_of(inst.space) {
                Some(_) => {
                    if inst.op.is_load() {
                        has_remote_load = true;
                    }
                    in_slice.insert(i);
                }
                // Local or unknown traffic inside the loop: leave the
                // loop alone rather than risk a racy overlap region.
                None => return None,
            }
        }
    }
    if !has_remote_load {
        return None;
    }

    // The counter update ships with the body so the near core pays for
    // it per iteration; a residual host loop keeps the original copy.
    let counter_add = range
        .iter()
        .copied()
        .find(|&i| f.body[i].op.dsts().contains(&l.counter))
        .expect("counted loop has a counter def");
    in_slice.insert(counter_add);

    // Dependence closure within the loop body: pull in every in-range
    // def of a register a slice instruction reads, and every in-range
    // reader of a register a slice instruction defines.
    loop {
        let mut grew = false;
        let members: Vec<usize> = in_slice.iter().copied().collect();
        for &i in &members {
            for src in f.body[i].op.srcs() {
                for &j in &range {
                    if f.body[j].op.dsts().contains(&src) && in_slice.insert(j) {
                        grew = true;
                    }
                }
            }
            for dst in f.body[i].op.dsts() {
                for &j in &range {
                    if f.body[j].op.srcs().contains(&dst) && in_slice.insert(j) {
                        grew = true;
                    }
                }
            }
        }
        if !grew {
            break;
        }
    }

    if in_slice.len() > opts.max_slice_len {
        return None;
    }

    // Live-ins: read before any in-slice definition, walking in order.
    let mut defined: BTreeSet<Reg> = BTreeSet::new();
    let mut live_ins: Vec<Reg> = Vec::new();
    for &i in &in_slice {
        for src in f.body[i].op.srcs() {
            if !defined.contains(&src) && !live_ins.contains(&src) {
                live_ins.push(src);
            }
        }
        for d in f.body[i].op.dsts() {
            defined.insert(d);
        }
    }

    // Live-outs: slice-defined registers consumed outside the loop.
    let mut live_outs: Vec<Reg> = Vec::new();
    for d in &defined {
        let used_outside = f
            .body
            .iter()
            .enumerate()
            .filter(|(j, _)| *j < l.head || *j > l.back)
            .any(|(_, inst)| inst.op.srcs().contains(d));
        if used_outside && !live_outs.contains(d) {
            live_outs.push(*d);
        }
    }
    live_outs.sort();

    let body: Vec<Op> = in_slice.iter().map(|&i| f.body[i].op.clone()).collect();
    let mut touched = BTreeSet::new();
    let mut load_owners = Vec::new();
    for &i in &in_slice {
        if let Some(e) = endpoint_of(f.body[i].space) {
            touched.insert(e);
            if f.body[i].op.is_load() {
                load_owners.push(e);
            }
        }
    }

    let est_trip = const_trip_start(f, l).unwrap_or(opts.trip_guess);
    if est_trip == 0 {
        return None;
    }

    Some(OffloadSlice {
        id: 0,
        func: fi,
        instr_indices: in_slice.into_iter().collect(),
        body,
        trip: TripCount::Counted { counter: l.counter },
        live_ins,
        live_outs,
        touched_endpoints: touched,
        load_owners,
        anchor_index: l.head,
        anchor_label: u32::MAX,
        site: Site::Host,
        est_window: 0,
        est_trip,
        loop_range: Some((l.head, l.back)),
    })
}

/// Constant-propagate the counter's start value backwards from the
/// loop head through straight-line code.
fn const_trip_start(f: &crate::ir::Function, l: &CountedLoop) -> Option<u64> {
    let mut j = l.head;
    while j > 0 {
        j -= 1;
        let inst = &f.body[j];
        match &inst.op {
            Op::Const { dst, imm } if *dst == l.counter => {
                return if *imm >= 0 { Some(*imm as u64) } else { None };
            }
            Op::Label { .. }
            | Op::Branch { .. }
            | Op::Jump { .. }
            | Op::Call { .. }
            | Op::Ret { .. } => return None,
            other if other.dsts().contains(&l.counter) => return None,
            _ => {}
        }
    }
    None
}

fn extract_straight_slices(
    p: &Program,
    fi: usize,
    occupied: &[bool],
    opts: &SliceOptions,
) -> Vec<OffloadSlice> {
    let f = &p.functions[fi];
    // Maximal straight-line runs outside counted loops.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, inst) in f.body.iter().enumerate() {
        let breaks = occupied[i]
            || matches!(
                inst.op,
                Op::Label { .. }
                    | Op::Branch { .. }
                    | Op::Jump { .. }
                    | Op::Ret { .. }
                    | Op::SubmitSlice { .. }
                    | Op::AwaitMailbox { .. }
            );
        match (breaks, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, f.body.len()));
    }

    let mut out = Vec::new();
    for (s, e) in runs {
        out.extend(slices_in_run(p, fi, s, e, opts));
    }
    out
}

/// Build slices for one straight-line run: group data-dependent remote
/// loads into chains, attach their pure address closure, split chains
/// that exceed the length cap, and batch independent chains when
/// enabled.
fn slices_in_run(
    p: &Program,
    fi: usize,
    start: usize,
    end: usize,
    opts: &SliceOptions,
) -> Vec<OffloadSlice> {
    let f = &p.functions[fi];
    let remote_loads: Vec<usize> = (start..end)
        .filter(|&i| f.body[i].op.is_load() && endpoint_of(f.body[i].space).is_some())
        .collect();
    if remote_loads.is_empty() {
        return Vec::new();
    }

    // Last definition of each register before index i within the run.
    let last_def_before = |reg: Reg, i: usize| -> Option<usize> {
        (start..i).rev().find(|&j| f.body[j].op.dsts().contains(&reg))
    };

    // Chain components: a load joins the component of any remote load
    // reachable through its pure address closure.
    #[derive(Default, Clone)]
    struct Piece {
        loads: Vec<usize>,
        closure: BTreeSet<usize>,
        live_ins: BTreeSet<Reg>,
    }
    let mut component_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut pieces: Vec<Piece> = Vec::new();

    for &li in &remote_loads {
        if component_of.contains_key(&li) {
            continue;
        }
        let mut piece = Piece::default();
        let mut work = vec![li];
        while let Some(load_idx) = work.pop() {
            if component_of.contains_key(&load_idx) {
                continue;
            }
            component_of.insert(load_idx, pieces.len());
            piece.loads.push(load_idx);
            piece.closure.insert(load_idx);
            // Backward closure of the load's address through pure ops.
            let mut inner = vec![load_idx];
            while let Some(i) = inner.pop() {
                for src in f.body[i].op.srcs() {
                    match last_def_before(src, i) {
                        Some(d) => match &f.body[d].op {
                            Op::Const { .. } | Op::Add { .. } | Op::Mul { .. } | Op::Cmp { .. } => {
                                if piece.closure.insert(d) {
                                    inner.push(d);
                                }
                            }
                            Op::Load { .. } if endpoint_of(f.body[d].space).is_some() => {
                                // Chained remote load: same component.
                                if !piece.closure.contains(&d) {
                                    work.push(d);
                                }
                            }
                            _ => {
                                // Local/unknown load, call, anything
                                // else: cut here, host supplies it.
                                piece.live_ins.insert(src);
                            }
                        },
                        None => {
                            piece.live_ins.insert(src);
                        }
                    }
                }
            }
        }
        piece.loads.sort();
        pieces.push(piece);
    }

    // Split oversized chains at dependence-legal points: consecutive
    // load groups, each with the closure not already claimed.
    let mut groups: Vec<Piece> = Vec::new();
    for piece in pieces {
        if piece.closure.len() <= opts.max_slice_len {
            groups.push(piece);
            continue;
        }
        let mut claimed: BTreeSet<usize> = BTreeSet::new();
        let mut cur = Piece::default();
        for &li in &piece.loads {
            // Closure for this load alone, stopping at claimed indices.
            let mut add = BTreeSet::new();
            add.insert(li);
            let mut inner = vec![li];
            let mut ins: BTreeSet<Reg> = BTreeSet::new();
            while let Some(i) = inner.pop() {
                for src in f.body[i].op.srcs() {
                    match last_def_before(src, i) {
                        Some(d)
                            if !claimed.contains(&d)
                                && matches!(
                                    &f.body[d].op,
                                    Op::Const { .. }
                                        | Op::Add { .. }
                                        | Op::Mul { .. }
                                        | Op::Cmp { .. }
                                ) =>
                        {
                            if add.insert(d) {
                                inner.push(d);
                            }
                        }
                        _ => {
                            ins.insert(src);
                        }
                    }
                }
            }
            if !cur.closure.is_empty() && cur.closure.len() + add.len() > opts.max_slice_len {
                groups.push(std::mem::take(&mut cur));
            }
            claimed.extend(add.iter().copied());
            cur.loads.push(li);
            cur.closure.extend(add);
            cur.live_ins.extend(ins);
        }
        if !cur.closure.is_empty() {
            groups.push(cur);
        }
    }

    // Batch independent groups in program order.
    let mut batched: Vec<Piece> = Vec::new();
    for g in groups {
        match batched.last_mut() {
            Some(last)
                if opts.batching && last.closure.len() + g.closure.len() <= opts.max_slice_len =>
            {
                last.loads.extend(g.loads.iter().copied());
                last.closure.extend(g.closure.iter().copied());
                last.live_ins.extend(g.live_ins.iter().copied());
                last.loads.sort();
            }
            _ => batched.push(g),
        }
    }

    let mut out = Vec::new();
    for piece in batched {
        // Live-ins that are defined within the slice itself are not
        // live-ins (re-walk in order, like the loop case).
        let ordered: Vec<usize> = piece.closure.iter().copied().collect();
        let mut defined: BTreeSet<Reg> = BTreeSet::new();
        let mut live_ins: Vec<Reg> = Vec::new();
        for &i in &ordered {
            for src in f.body[i].op.srcs() {
                if !defined.contains(&src) && !live_ins.contains(&src) {
                    live_ins.push(src);
                }
            }
            defined.extend(f.body[i].op.dsts());
        }
        let mut live_outs: Vec<Reg> = Vec::new();
        for &li in &piece.loads {
            if let Some(d) = f.body[li].op.dst() {
                if !live_outs.contains(&d) {
                    live_outs.push(d);
                }
            }
        }
        live_outs.sort();
        let body: Vec<Op> = ordered.iter().map(|&i| f.body[i].op.clone()).collect();
        let mut touched = BTreeSet::new();
        let mut load_owners = Vec::new();
        for &i in &ordered {
            if let Some(e) = endpoint_of(f.body[i].space) {
                if f.body[i].op.is_load() {
                    touched.insert(e);
                    load_owners.push(e);
                }
            }
        }
        let anchor_index = piece.loads[0];
        out.push(OffloadSlice {
            id: 0,
            func: fi,
            instr_indices: ordered,
            body,
            trip: TripCount::Once,
            live_ins,
            live_outs,
            touched_endpoints: touched,
            load_owners,
            anchor_index,
            anchor_label: u32::MAX,
            site: Site::Host,
            est_window: 0,
            est_trip: 1,
            loop_range: None,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::mark::{mark_remotable, RegionMap};
    use crate::ir::parse_program;

    fn marked(src: &str) -> Program {
        let p = parse_program(src).unwrap();
        assert!(crate::ir::validate(&p).is_empty());
        let rm = RegionMap::from_program(&p);
        mark_remotable(&p, &rm)
    }

    const CHASE: &str = "region pool 65536 4096 remote(2)\nfn main() {\n  r1 = const 65536\n  r2 = const 40\n  label loop\n  r1 = load [r1], 8\n  r2 = add r2, -1\n  branch r2, loop\n  ret r1\n}\n";

    #[test]
    fn chase_loop_becomes_one_counted_slice() {
        let p = marked(CHASE);
        let slices = extract_slices(&p, &SliceOptions::default());
        assert_eq!(slices.len(), 1);
        let s = &slices[0];
        assert_eq!(s.body.len(), 2, "load plus counter update");
        assert_eq!(s.live_ins, vec![Reg(1), Reg(2)]);
        assert_eq!(s.live_outs, vec![Reg(1)]);
        assert!(matches!(s.trip, TripCount::Counted { counter: Reg(2) }));
        assert_eq!(s.est_trip, 40, "counter start constant-propagates");
        assert!(s.is_dependence_closed());
        assert_eq!(s.load_owners, vec![NodeId(2)]);
    }

    #[test]
    fn two_independent_loads_batch_into_one_slice() {
        let src = "region a 65536 4096 remote(1)\nregion b 1048576 4096 remote(2)\nfn main() {\n  r1 = load [65536], 8\n  r2 = load [1048576], 8\n  r3 = add r1, r2\n  ret r3\n}\n";
        let p = marked(src);
        let slices = extract_slices(&p, &SliceOptions::default());
        assert_eq!(slices.len(), 1);
        let s = &slices[0];
        assert_eq!(s.load_owners.len(), 2);
        assert_eq!(s.live_outs, vec![Reg(1), Reg(2)]);
        assert!(matches!(s.trip, TripCount::Once));
        assert_eq!(s.touched_endpoints.len(), 2);
    }

    #[test]
    fn batching_off_keeps_chains_separate() {
        let src = "region a 65536 4096 remote(1)\nfn main() {\n  r1 = load [65536], 8\n  r2 = load [65600], 8\n  r3 = add r1, r2\n  ret r3\n}\n";
        let p = marked(src);
        let opts = SliceOptions { batching: false, ..Default::default() };
        assert_eq!(extract_slices(&p, &opts).len(), 2);
    }

    #[test]
    fn all_local_program_has_no_slices() {
        let src = "region a 0 4096 local\nfn main() {\n  r1 = load [0], 8\n  ret r1\n}\n";
        let p = marked(src);
        assert!(extract_slices(&p, &SliceOptions::default()).is_empty());
    }

    #[test]
    fn unknown_accesses_are_never_sliced() {
        // Address merges local and remote: unknown, so no slice.
        let src = "region a 0 4096 local\nregion b 65536 4096 remote(1)\nfn main(r9) {\n  r1 = const 0\n  branch r9, other\n  jump go\n  label other\n  r1 = const 65536\n  label go\n  r2 = load [r1], 8\n  ret r2\n}\n";
        let p = marked(src);
        assert!(extract_slices(&p, &SliceOptions::default()).is_empty());
    }

    #[test]
    fn dependent_chain_is_a_single_slice_and_splits_at_cap() {
        let mut body = String::from("region pool 65536 65536 remote(1)\nfn main() {\n  r1 = const 65536\n");
        for _ in 0..6 {
            body.push_str("  r1 = load [r1], 8\n");
        }
        body.push_str("  ret r1\n}\n");
        let p = marked(&body);
        let slices = extract_slices(&p, &SliceOptions::default());
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].body.len(), 6);

        let opts = SliceOptions { max_slice_len: 2, ..Default::default() };
        let split = extract_slices(&p, &opts);
        assert_eq!(split.len(), 3, "chain of 6 splits into 3 slices of 2");
        // Later pieces consume the earlier piece's final pointer.
        assert!(split[1].live_ins.contains(&Reg(1)));
    }

    #[test]
    fn chase_slice_executes_like_the_loop() {
        let p = marked(CHASE);
        let slices = extract_slices(&p, &SliceOptions::default());
        let s = &slices[0];
        let (_, img) = crate::workloads::generate(&crate::workloads::WorkloadSpec {
            kind: crate::workloads::WorkloadKind::PointerChase,
            n: 40,
            stride: 64,
            seed: 9,
            space: crate::ir::AddressSpace::Remote(NodeId(2)),
            work_per_element: 0,
        })
        .unwrap();
        // Execute the extracted slice against the generated image:
        // live-ins are (pointer=65536 is the region base used by the
        // generator too) and counter 40.
        let mut mem = img.clone();
        let run = s.execute(&[1 << 20, 40], &mut mem).unwrap();
        assert_eq!(run.dyn_loads, 40);
        assert_eq!(run.dyn_instrs, 80);
        assert_eq!(run.lines_loaded.len(), 40);
        // Walks the full cycle back to the base.
        assert_eq!(run.outs[0], 1 << 20);
    }

    #[test]
    fn local_traffic_inside_loop_blocks_slicing() {
        let src = "region a 0 4096 local\nregion pool 65536 4096 remote(2)\nfn main() {\n  r1 = const 65536\n  r2 = const 8\n  label loop\n  r1 = load [r1], 8\n  r3 = load [64], 8\n  r2 = add r2, -1\n  branch r2, loop\n  r4 = add r1, r3\n  ret r4\n}\n";
        let p = marked(src);
        assert!(extract_slices(&p, &SliceOptions::default()).is_empty());
    }
}
