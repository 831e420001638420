//! The offload rewrite: replace each slice's instructions with a
//! `submit_slice` hoisted to the earliest dependence-legal point and an
//! `await_mailbox` sunk to the latest, leaving independent arithmetic
//! in between as the overlap region the host can retire while the
//! slice is in flight.
//!
//! Placement rules keep the architectural trace aligned with the
//! original program: overlap regions never contain memory operations
//! or control, so splicing a slice's loads in at its await reproduces
//! the sequential load order exactly.

use std::collections::BTreeMap;

use crate::ir::{
    Diagnostic, Inst, InstrLoc, InterpError, MemoryImage, Op, Program, Reg, SliceExecutor,
    SliceFlush,
};

use super::cost::Site;
use super::slice::{OffloadSlice, TripCount};

/// A program rewritten for offload, plus everything needed to re-plan
/// it: the labeled source and the full slice catalog (including slices
/// currently parked on the host).
#[derive(Debug, Clone, PartialEq)]
pub struct OffloadedProgram {
    /// The rewritten program containing submit/await pairs.
    pub program: Program,
    /// The labeled source program the rewrite was derived from.
    pub source: Program,
    /// Every extracted slice; only those with a non-host site are
    /// active in `program`.
    pub catalog: Vec<OffloadSlice>,
    /// slice id -> half-open instruction range strictly between its
    /// submit and await in the rewritten function body.
    pub overlap_regions: BTreeMap<u32, (usize, usize)>,
}

impl OffloadedProgram {
    pub fn active_slices(&self) -> impl Iterator<Item = &OffloadSlice> {
        self.catalog.iter().filter(|s| s.site != Site::Host)
    }

    pub fn slice(&self, id: u32) -> Option<&OffloadSlice> {
        self.catalog.iter().find(|s| s.id == id)
    }
}

fn is_control(op: &Op) -> bool {
    matches!(
        op,
        Op::Label { .. }
            | Op::ProfileLabel { .. }
            | Op::Branch { .. }
            | Op::Jump { .. }
            | Op::Call { .. }
            | Op::Ret { .. }
    )
}

/// Rewrite `labeled` so every slice with a non-host site runs
/// remotely. The input program must already carry profile labels and
/// the slices' indices must reference it.
pub fn rewrite_with_offload(labeled: &Program, slices: &[OffloadSlice]) -> OffloadedProgram {
    let mut program = labeled.clone();
    let mut overlap_regions = BTreeMap::new();

    for fi in 0..program.functions.len() {
        let mut active: Vec<&OffloadSlice> = slices
            .iter()
            .filter(|s| s.func == fi && s.site != Site::Host)
            .collect();
        if active.is_empty() {
            continue;
        }
        active.sort_by_key(|s| s.anchor_index);

        let body = &program.functions[fi].body;
        let mut removed = vec![false; body.len()];
        // (old position, op) inserted before that position; awaits
        // sort ahead of submits at equal positions so a consumer's
        // inputs are written before a later slice reads them.
        let mut inserts: Vec<(usize, u8, Op)> = Vec::new();
        // Live-outs already promised by a placed await: register ->
        // await's old position. A later submit may not hoist above it.
        let mut promised: BTreeMap<Reg, usize> = BTreeMap::new();

        for s in &active {
            let (first, last) = plan_removal(body, s, &mut removed);
            let submit_pos = hoist_submit(body, s, first, &promised);
            let await_pos = sink_await(body, s, last);
            inserts.push((
                submit_pos,
                1,
                Op::SubmitSlice { id: s.id, args: s.live_ins.clone() },
            ));
            inserts.push((
                await_pos,
                0,
                Op::AwaitMailbox { id: s.id, dsts: s.live_outs.clone() },
            ));
            for r in &s.live_outs {
                promised.insert(*r, await_pos);
            }
        }
        inserts.sort_by_key(|(pos, kind, _)| (*pos, *kind));

        // Rebuild, tracking where each submit/await lands.
        let old_body = std::mem::take(&mut program.functions[fi].body);
        let mut new_body: Vec<Inst> = Vec::new();
        let mut placed: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        let mut pending = inserts.into_iter().peekable();
        for (i, inst) in old_body.into_iter().enumerate() {
            while pending.peek().is_some_and(|(p, _, _)| *p == i) {
                let (_, _, op) = pending.next().unwrap();
                record_placement(&mut placed, &op, new_body.len());
                new_body.push(Inst::new(op));
            }
            if !removed[i] {
                new_body.push(inst);
            }
        }
        for (_, _, op) in pending {
            record_placement(&mut placed, &op, new_body.len());
            new_body.push(Inst::new(op));
        }
        program.functions[fi].body = new_body;
        program.functions[fi].rebuild_labels();

        for (id, (sub, awa)) in placed {
            overlap_regions.insert(id, (sub + 1, awa));
        }
    }

    OffloadedProgram {
        program,
        source: labeled.clone(),
        catalog: slices.to_vec(),
        overlap_regions,
    }
}

fn record_placement(placed: &mut BTreeMap<u32, (usize, usize)>, op: &Op, at: usize) {
    match op {
        Op::SubmitSlice { id, .. } => {
            placed.entry(*id).or_insert((0, 0)).0 = at;
        }
        Op::AwaitMailbox { id, .. } => {
            placed.entry(*id).or_insert((0, 0)).1 = at;
        }
        _ => {}
    }
}

/// Mark the instructions the rewrite removes for this slice and return
/// the first and last removed positions.
fn plan_removal(body: &[Inst], s: &OffloadSlice, removed: &mut [bool]) -> (usize, usize) {
    match s.loop_range {
        Some((head, back)) => {
            let counter_add = match s.trip {
                TripCount::Counted { counter } => s
                    .instr_indices
                    .iter()
                    .copied()
                    .find(|&i| body[i].op.dsts().contains(&counter)),
                TripCount::Once => None,
            };
            let residual: Vec<usize> = (head + 1..back)
                .filter(|i| !s.instr_indices.contains(i))
                .collect();
            if residual.is_empty() {
                // Nothing left for the host: drop the whole loop.
                for slot in removed.iter_mut().take(back + 1).skip(head) {
                    *slot = true;
                }
                (head, back)
            } else {
                // Keep the loop skeleton as overlap work; the counter
                // update stays so the residual loop still terminates
                // (the slice body carries its own copy).
                for &i in &s.instr_indices {
                    if counter_add != Some(i) {
                        removed[i] = true;
                    }
                }
                (head, back)
            }
        }
        None => {
            // Straight-line: only the loads leave; their address
            // arithmetic stays host-side for any other consumers.
            let loads: Vec<usize> = s
                .instr_indices
                .iter()
                .copied()
                .filter(|&i| body[i].op.is_load())
                .collect();
            for &i in &loads {
                removed[i] = true;
            }
            (*loads.first().unwrap(), *loads.last().unwrap())
        }
    }
}

/// Earliest dependence-legal submit position at or before `first`:
/// walk upward past pure instructions that neither define a live-in
/// nor touch memory or control, and never above an await that promises
/// one of our live-ins.
fn hoist_submit(
    body: &[Inst],
    s: &OffloadSlice,
    first: usize,
    promised: &BTreeMap<Reg, usize>,
) -> usize {
    let floor = s
        .live_ins
        .iter()
        .filter_map(|r| promised.get(r).copied())
        .max()
        .unwrap_or(0);
    let mut pos = first;
    while pos > floor {
        let prev = &body[pos - 1].op;
        if is_control(prev)
            || prev.is_memory()
            || matches!(prev, Op::SubmitSlice { .. } | Op::AwaitMailbox { .. })
            || prev.dsts().iter().any(|d| s.live_ins.contains(d))
        {
            break;
        }
        pos -= 1;
    }
    pos
}

/// Latest legal await position after `last`: slide down past pure
/// instructions that do not read or write any live-out and do not
/// touch memory or control.
fn sink_await(body: &[Inst], s: &OffloadSlice, last: usize) -> usize {
    let mut pos = last + 1;
    while pos < body.len() {
        let next = &body[pos].op;
        if is_control(next)
            || next.is_memory()
            || matches!(next, Op::SubmitSlice { .. } | Op::AwaitMailbox { .. })
            || next.srcs().iter().any(|r| s.live_outs.contains(r))
            || next.dsts().iter().any(|d| s.live_outs.contains(d))
        {
            break;
        }
        pos += 1;
    }
    pos
}

/// Structural invariants of a rewritten program. Empty means valid.
pub fn check_offloaded(op: &OffloadedProgram) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for s in op.active_slices() {
        let f = &op.program.functions[s.func];
        let submits: Vec<usize> = f
            .body
            .iter()
            .enumerate()
            .filter(|(_, x)| matches!(&x.op, Op::SubmitSlice { id, .. } if *id == s.id))
            .map(|(i, _)| i)
            .collect();
        let awaits: Vec<usize> = f
            .body
            .iter()
            .enumerate()
            .filter(|(_, x)| matches!(&x.op, Op::AwaitMailbox { id, .. } if *id == s.id))
            .map(|(i, _)| i)
            .collect();
        if submits.len() != 1 || awaits.len() != 1 {
            diags.push(Diagnostic::new(
                0,
                format!(
                    "slice {}: {} submits and {} awaits (expected exactly one of each)",
                    s.id,
                    submits.len(),
                    awaits.len()
                ),
            ));
            continue;
        }
        let (sub, awa) = (submits[0], awaits[0]);
        if sub >= awa {
            diags.push(Diagnostic::new(0, format!("slice {}: await precedes submit", s.id)));
        }
        // Await must post-dominate the submit: every path from the
        // submit to a ret passes the await.
        if !postdominates(f, sub, awa) {
            diags.push(Diagnostic::new(
                0,
                format!("slice {}: await does not post-dominate submit", s.id),
            ));
        }
        // The overlap region may not depend on the slice's results or
        // touch memory.
        if let Some((start, end)) = op.overlap_regions.get(&s.id) {
            for i in *start..*end {
                let inst = &f.body[i];
                if inst.op.srcs().iter().any(|r| s.live_outs.contains(r)) {
                    diags.push(Diagnostic::new(
                        0,
                        format!("slice {}: overlap instruction {i} reads a live-out", s.id),
                    ));
                }
            }
        }
    }
    diags
}

/// True when every path from `from` reaching a `ret` passes `through`.
fn postdominates(f: &crate::ir::Function, from: usize, through: usize) -> bool {
    let mut seen = vec![false; f.body.len()];
    let mut stack = vec![from];
    while let Some(i) = stack.pop() {
        if i == through || seen[i] {
            continue;
        }
        seen[i] = true;
        if matches!(f.body[i].op, Op::Ret { .. }) && i != through {
            return false;
        }
        stack.extend(super::mark::successors_of(f, i));
    }
    true
}

/// Idealized slice executor: submissions run eagerly against the
/// interpreter's image, results are handed over at the await. Used for
/// the functional-equivalence oracle.
pub struct IdealExecutor<'a> {
    catalog: &'a [OffloadSlice],
    pending: BTreeMap<u32, SliceFlush>,
}

impl<'a> IdealExecutor<'a> {
    pub fn new(catalog: &'a [OffloadSlice]) -> Self {
        IdealExecutor { catalog, pending: BTreeMap::new() }
    }
}

impl SliceExecutor for IdealExecutor<'_> {
    fn submit(
        &mut self,
        id: u32,
        args: &[u64],
        mem: &mut MemoryImage,
        loc: InstrLoc,
    ) -> Result<(), InterpError> {
        let slice = self
            .catalog
            .iter()
            .find(|s| s.id == id)
            .ok_or(InterpError::SliceTrap { id, msg: format!("unknown slice at {loc}") })?;
        let run = slice
            .execute(args, mem)
            .map_err(|e| InterpError::SliceTrap { id, msg: e.to_string() })?;
        self.pending.insert(
            id,
            SliceFlush {
                outs: run.outs,
                loads: run.loads.iter().map(|(_, v)| *v).collect(),
                stores: run.stores,
            },
        );
        Ok(())
    }

    fn collect(&mut self, id: u32, loc: InstrLoc) -> Result<SliceFlush, InterpError> {
        self.pending
            .remove(&id)
            .ok_or(InterpError::SliceTrap { id, msg: format!("await without submit at {loc}") })
    }
}

/// Run the rewritten program under the idealized executor.
pub fn interpret_offloaded(
    op: &OffloadedProgram,
    mem: &MemoryImage,
    inputs: &[(Reg, u64)],
    budget: u64,
) -> Result<crate::ir::ArchResult, InterpError> {
    let mut mem = mem.clone();
    let mut exec = IdealExecutor::new(&op.catalog);
    crate::ir::interpret_with_executor(&op.program, &mut mem, inputs, budget, &mut exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::labels::insert_profile_labels;
    use crate::analyze::mark::{mark_remotable, propagate_remote_pointers, RegionMap};
    use crate::analyze::slice::{extract_slices, SliceOptions};
    use crate::fabric::Topology;
    use crate::ir::{interpret_with_budget, parse_program, validate};

    fn build(src: &str) -> OffloadedProgram {
        let p = parse_program(src).unwrap();
        assert!(validate(&p).is_empty(), "{:?}", validate(&p));
        let rm = RegionMap::from_program(&p);
        let mut marked = mark_remotable(&p, &rm);
        propagate_remote_pointers(&mut marked);
        let mut slices = extract_slices(&marked, &SliceOptions::default());
        let topo = Topology::builtin_line();
        let cm = super::super::cost::CostModel::default();
        for s in &mut slices {
            let (site, est) = super::super::cost::choose_site(s, &cm, &topo).unwrap();
            s.site = site;
            s.est_window = est;
        }
        let labeled = insert_profile_labels(&marked, &mut slices);
        rewrite_with_offload(&labeled, &slices)
    }

    const CHASE_FODDER: &str = "region pool 65536 4096 remote(2)\nfn main() {\n  r1 = const 65536\n  r2 = const 8\n  r9 = const 0\n  label loop\n  r1 = load [r1], 8\n  r9 = add r9, 1\n  r2 = add r2, -1\n  branch r2, loop\n  ret r1\n}\n";

    const CHASE_BARE: &str = "region pool 65536 4096 remote(2)\nfn main() {\n  r1 = const 65536\n  r2 = const 8\n  label loop\n  r1 = load [r1], 8\n  r2 = add r2, -1\n  branch r2, loop\n  ret r1\n}\n";

    fn chase_image() -> MemoryImage {
        let p = parse_program(CHASE_BARE).unwrap();
        let mut img = MemoryImage::new(p.regions.clone());
        // 8-line cycle: i -> i+1 mod 8.
        for i in 0..8u64 {
            img.write_value(65536 + i * 64, 65536 + ((i + 1) % 8) * 64, 8).unwrap();
        }
        img
    }

    #[test]
    fn bare_loop_is_fully_replaced_zero_overlap() {
        let op = build(CHASE_BARE);
        assert!(check_offloaded(&op).is_empty(), "{:?}", check_offloaded(&op));
        let f = &op.program.functions[0];
        assert!(!f.body.iter().any(|i| matches!(i.op, Op::Load { .. })));
        assert!(!f.body.iter().any(|i| matches!(i.op, Op::Branch { .. })));
        let (start, end) = op.overlap_regions[&0];
        assert_eq!(start, end, "no residual work means an empty overlap region");
    }

    #[test]
    fn fodder_survives_as_residual_loop() {
        let op = build(CHASE_FODDER);
        assert!(check_offloaded(&op).is_empty(), "{:?}", check_offloaded(&op));
        let f = &op.program.functions[0];
        // The loop skeleton (label, fodder, counter, branch) remains.
        assert!(f.body.iter().any(|i| matches!(i.op, Op::Branch { .. })));
        assert!(!f.body.iter().any(|i| matches!(i.op, Op::Load { .. })));
        let (start, end) = op.overlap_regions[&0];
        assert!(end > start, "residual loop forms the overlap region");
    }

    #[test]
    fn rewritten_chase_matches_interpreter() {
        let op = build(CHASE_BARE);
        let img = chase_image();
        let original = parse_program(CHASE_BARE).unwrap();
        let want = interpret_with_budget(&original, &img, &[], 1_000_000).unwrap();
        let got = interpret_offloaded(&op, &img, &[], 1_000_000).unwrap();
        assert_eq!(want.load_values(), got.load_values());
        assert_eq!(want.ret, got.ret);
        assert_eq!(want.stores, got.stores);
    }

    #[test]
    fn rewritten_fodder_chase_matches_interpreter() {
        let op = build(CHASE_FODDER);
        let img = chase_image();
        let original = parse_program(CHASE_FODDER).unwrap();
        let want = interpret_with_budget(&original, &img, &[], 1_000_000).unwrap();
        let got = interpret_offloaded(&op, &img, &[], 1_000_000).unwrap();
        assert_eq!(want.load_values(), got.load_values());
        assert_eq!(want.ret, got.ret);
    }

    #[test]
    fn straight_line_overlap_counts_independent_arithmetic() {
        // Five independent adds between the load and its use.
        let src = "region pool 65536 4096 remote(2)\nfn main() {\n  r1 = const 65536\n  r9 = const 0\n  r2 = load [r1], 8\n  r9 = add r9, 1\n  r9 = add r9, 2\n  r9 = add r9, 3\n  r9 = add r9, 4\n  r9 = add r9, 5\n  r3 = add r2, 1\n  ret r3\n}\n";
        let op = build(src);
        assert!(check_offloaded(&op).is_empty(), "{:?}", check_offloaded(&op));
        let (start, end) = op.overlap_regions[&0];
        assert_eq!(end - start, 5);
        let img = MemoryImage::new(parse_program(src).unwrap().regions.clone());
        let original = parse_program(src).unwrap();
        let want = interpret_with_budget(&original, &img, &[], 10_000).unwrap();
        let got = interpret_offloaded(&op, &img, &[], 10_000).unwrap();
        assert_eq!(want.ret, got.ret);
        assert_eq!(want.load_values(), got.load_values());
    }

    #[test]
    fn zero_overlap_slice_is_still_rewritten() {
        let src = "region pool 65536 4096 remote(2)\nfn main() {\n  r1 = const 65536\n  r2 = load [r1], 8\n  r3 = add r2, 1\n  ret r3\n}\n";
        let op = build(src);
        assert_eq!(op.active_slices().count(), 1);
        let (start, end) = op.overlap_regions[&0];
        assert_eq!(start, end);
    }

    #[test]
    fn split_chain_awaits_feed_later_submits_in_order() {
        let mut src = String::from("region pool 65536 65536 remote(2)\nfn main() {\n  r1 = const 65536\n");
        for _ in 0..6 {
            src.push_str("  r1 = load [r1], 8\n");
        }
        src.push_str("  ret r1\n}\n");
        let p = parse_program(&src).unwrap();
        let rm = RegionMap::from_program(&p);
        let marked = mark_remotable(&p, &rm);
        let opts = SliceOptions { max_slice_len: 2, ..Default::default() };
        let mut slices = extract_slices(&marked, &opts);
        assert_eq!(slices.len(), 3);
        let topo = Topology::builtin_line();
        let cm = super::super::cost::CostModel::default();
        for s in &mut slices {
            let (site, est) = super::super::cost::choose_site(s, &cm, &topo).unwrap();
            s.site = site;
            s.est_window = est;
        }
        let labeled = insert_profile_labels(&marked, &mut slices);
        let op = rewrite_with_offload(&labeled, &slices);
        assert!(check_offloaded(&op).is_empty(), "{:?}", check_offloaded(&op));

        // Awaits and submits must interleave so each submit's inputs
        // are already bound: a1 <= s2, a2 <= s3 in program order.
        let f = &op.program.functions[0];
        let pos = |pred: &dyn Fn(&Op) -> bool| -> Vec<usize> {
            f.body.iter().enumerate().filter(|(_, x)| pred(&x.op)).map(|(i, _)| i).collect()
        };
        let submits = pos(&|o| matches!(o, Op::SubmitSlice { .. }));
        let awaits = pos(&|o| matches!(o, Op::AwaitMailbox { .. }));
        assert!(awaits[0] < submits[1]);
        assert!(awaits[1] < submits[2]);

        // And the whole thing still computes the right pointer.
        let mut img = MemoryImage::new(p.regions.clone());
        for i in 0..1024u64 {
            img.write_value(65536 + i * 64, 65536 + ((i * 7 + 1) % 1024) * 64, 8).unwrap();
        }
        let want = interpret_with_budget(&p, &img, &[], 100_000).unwrap();
        let got = interpret_offloaded(&op, &img, &[], 100_000).unwrap();
        assert_eq!(want.ret, got.ret);
        assert_eq!(want.load_values(), got.load_values());
    }
}
