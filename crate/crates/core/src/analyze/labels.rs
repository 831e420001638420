//! Profile label insertion: one label at every function entry, one at
//! every slice anchor. Ids are deterministic (entry labels use the
//! function index, anchors use 1000 + slice id) so relabeling an
//! already-labeled program changes nothing.

use crate::ir::{Inst, Op, Program};

use super::slice::OffloadSlice;

pub const ANCHOR_LABEL_BASE: u32 = 1000;

/// Insert the labels and remap the slices' instruction indices to the
/// labeled program.
pub fn insert_profile_labels(p: &Program, slices: &mut [OffloadSlice]) -> Program {
    let mut out = p.clone();
    for fi in 0..out.functions.len() {
        // Planned insertions at (position, label id), in position order.
        let mut inserts: Vec<(usize, u32)> = Vec::new();
        let entry_id = fi as u32;
        let already_entry = matches!(
            out.functions[fi].body.first(),
            Some(Inst { op: Op::ProfileLabel { id }, .. }) if *id == entry_id
        );
        if !already_entry {
            inserts.push((0, entry_id));
        }
        for s in slices.iter().filter(|s| s.func == fi) {
            let id = ANCHOR_LABEL_BASE + s.id;
            let pos = s.anchor_index;
            let already = pos > 0
                && matches!(
                    &out.functions[fi].body[pos - 1],
                    Inst { op: Op::ProfileLabel { id: have }, .. } if *have == id
                );
            if !already {
                inserts.push((pos, id));
            }
        }
        inserts.sort();

        if inserts.is_empty() {
            continue;
        }

        let shift_of = |old: usize| -> usize {
            old + inserts.iter().take_while(|(p, _)| *p <= old).count()
        };

        // Rebuild the body with labels spliced in.
        let old_body = std::mem::take(&mut out.functions[fi].body);
        let mut body = Vec::with_capacity(old_body.len() + inserts.len());
        let mut pending = inserts.iter().peekable();
        for (i, inst) in old_body.into_iter().enumerate() {
            while pending.peek().is_some_and(|(p, _)| *p == i) {
                let (_, id) = pending.next().unwrap();
                body.push(Inst::new(Op::ProfileLabel { id: *id }));
            }
            body.push(inst);
        }
        for (_, id) in pending {
            body.push(Inst::new(Op::ProfileLabel { id: *id }));
        }
        out.functions[fi].body = body;
        out.functions[fi].rebuild_labels();

        for s in slices.iter_mut().filter(|s| s.func == fi) {
            s.anchor_label = ANCHOR_LABEL_BASE + s.id;
            s.anchor_index = shift_of(s.anchor_index);
            for idx in &mut s.instr_indices {
                *idx = shift_of(*idx);
            }
            if let Some((h, b)) = &mut s.loop_range {
                *h = shift_of(*h);
                *b = shift_of(*b);
            }
        }
    }
    // Slices in other functions still need their label ids set even if
    // nothing was inserted this round (idempotent rerun).
    for s in slices.iter_mut() {
        if s.anchor_label == u32::MAX {
            s.anchor_label = ANCHOR_LABEL_BASE + s.id;
        }
    }
    out
}

/// All profile label ids in a program, in body order.
pub fn profile_label_ids(p: &Program) -> Vec<u32> {
    let mut out = Vec::new();
    for f in &p.functions {
        for inst in &f.body {
            if let Op::ProfileLabel { id } = inst.op {
                out.push(id);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyze::mark::{mark_remotable, RegionMap};
    use crate::analyze::slice::{extract_slices, SliceOptions};
    use crate::ir::parse_program;

    fn prepared(src: &str) -> (Program, Vec<OffloadSlice>) {
        let p = parse_program(src).unwrap();
        let rm = RegionMap::from_program(&p);
        let marked = mark_remotable(&p, &rm);
        let slices = extract_slices(&marked, &SliceOptions::default());
        (marked, slices)
    }

    const CHASE: &str = "region pool 65536 4096 remote(2)\nfn main() {\n  r1 = const 65536\n  r2 = const 8\n  label loop\n  r1 = load [r1], 8\n  r2 = add r2, -1\n  branch r2, loop\n  ret r1\n}\n";

    #[test]
    fn one_function_one_slice_two_labels() {
        let (p, mut slices) = prepared(CHASE);
        assert_eq!(slices.len(), 1);
        let labeled = insert_profile_labels(&p, &mut slices);
        assert_eq!(profile_label_ids(&labeled).len(), 2);
        // The anchor sits immediately before the loop head label.
        let s = &slices[0];
        assert!(matches!(
            labeled.functions[0].body[s.anchor_index].op,
            Op::Label { .. }
        ));
        assert!(matches!(
            labeled.functions[0].body[s.anchor_index - 1].op,
            Op::ProfileLabel { id } if id == s.anchor_label
        ));
        assert!(crate::ir::validate(&labeled).is_empty());
    }

    #[test]
    fn three_functions_no_slices_three_labels() {
        let src = "fn main() {\n  r1 = call a\n  r2 = call b\n  ret r2\n}\nfn a() {\n  r1 = const 1\n  ret r1\n}\nfn b() {\n  r1 = const 2\n  ret r1\n}\n";
        let (p, mut slices) = prepared(src);
        assert!(slices.is_empty());
        let labeled = insert_profile_labels(&p, &mut slices);
        assert_eq!(profile_label_ids(&labeled), vec![0, 1, 2]);
    }

    #[test]
    fn relabeling_is_idempotent() {
        let (p, mut slices) = prepared(CHASE);
        let once = insert_profile_labels(&p, &mut slices);
        let twice = insert_profile_labels(&once, &mut slices);
        assert_eq!(once, twice);
        assert_eq!(profile_label_ids(&once), profile_label_ids(&twice));
    }

    #[test]
    fn slice_indices_remap_to_the_labeled_program() {
        let (p, mut slices) = prepared(CHASE);
        let labeled = insert_profile_labels(&p, &mut slices);
        let s = &slices[0];
        for &idx in &s.instr_indices {
            let op = &labeled.functions[s.func].body[idx].op;
            assert!(
                matches!(op, Op::Load { .. } | Op::Add { .. }),
                "remapped index {idx} points at {op:?}"
            );
        }
    }
}
