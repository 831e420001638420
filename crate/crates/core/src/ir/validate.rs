//! Structural validation. Returns diagnostics instead of failing, so
//! callers can report every violation at once.

use std::collections::{BTreeMap, BTreeSet};

use super::*;

/// Check every program-level invariant. Empty result means the program
/// is well formed.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    validate_regions(p, &mut diags);

    let mut names = BTreeSet::new();
    for f in &p.functions {
        if !names.insert(f.name.clone()) {
            diags.push(Diagnostic::new(0, format!("duplicate function name '{}'", f.name)));
        }
    }
    match p.functions.iter().filter(|f| f.name == "main").count() {
        1 => {}
        0 => diags.push(Diagnostic::new(0, "no function named 'main'")),
        n => diags.push(Diagnostic::new(0, format!("{n} functions named 'main'"))),
    }

    for f in &p.functions {
        validate_function(p, f, &mut diags);
    }

    diags
}

fn validate_regions(p: &Program, diags: &mut Vec<Diagnostic>) {
    let mut names = BTreeSet::new();
    for r in &p.regions {
        if !names.insert(r.name.clone()) {
            diags.push(Diagnostic::new(0, format!("duplicate region name '{}'", r.name)));
        }
        if r.base % LINE_BYTES != 0 {
            diags.push(Diagnostic::new(
                0,
                format!("region '{}' base {} not 64-byte aligned", r.name, r.base),
            ));
        }
        if r.len == 0 || r.len % LINE_BYTES != 0 {
            diags.push(Diagnostic::new(
                0,
                format!("region '{}' length {} not a positive multiple of 64", r.name, r.len),
            ));
        }
        if r.base.checked_add(r.len).is_none() {
            diags.push(Diagnostic::new(0, format!("region '{}' wraps the address space", r.name)));
        }
    }
    let mut sorted: Vec<&RegionDecl> = p.regions.iter().collect();
    sorted.sort_by_key(|r| r.base);
    for w in sorted.windows(2) {
        if w[0].base + w[0].len > w[1].base {
            diags.push(Diagnostic::new(
                0,
                format!("region overlap: '{}' and '{}'", w[0].name, w[1].name),
            ));
        }
    }
}

fn validate_function(p: &Program, f: &Function, diags: &mut Vec<Diagnostic>) {
    let loc = |inst: &Inst, msg: String| {
        let line = inst.line;
        Diagnostic::new(line, format!("in {}: {}", f.name, msg))
    };

    // Duplicate labels are a parse-level possibility; the labels map
    // keeps the last one, so detect them by counting.
    let mut seen = BTreeMap::new();
    for inst in &f.body {
        if let Op::Label { name } = &inst.op {
            *seen.entry(name.clone()).or_insert(0usize) += 1;
        }
    }
    for (name, count) in &seen {
        if *count > 1 {
            diags.push(Diagnostic::new(0, format!("in {}: duplicate label '{name}'", f.name)));
        }
    }

    let mut param_set = BTreeSet::new();
    for r in &f.params {
        if !param_set.insert(*r) {
            diags.push(Diagnostic::new(0, format!("in {}: duplicate parameter {r}", f.name)));
        }
    }

    for inst in &f.body {
        match &inst.op {
            Op::Branch { target, .. } | Op::Jump { target } => {
                if !f.labels.contains_key(target) {
                    diags.push(loc(inst, format!("undefined label {target}")));
                }
            }
            Op::Call { func, args, .. } => match p.function(func) {
                Some(callee) => {
                    if callee.params.len() != args.len() {
                        diags.push(loc(
                            inst,
                            format!(
                                "call to '{func}' passes {} args, expected {}",
                                args.len(),
                                callee.params.len()
                            ),
                        ));
                    }
                }
                None => diags.push(loc(inst, format!("call to undefined function '{func}'"))),
            },
            Op::Load { addr, size, .. } | Op::Store { addr, size, .. } => {
                if *size == 0 || u64::from(*size) > LINE_BYTES {
                    diags.push(loc(inst, format!("access size {size} out of range 1..=64")));
                }
                if let Operand::Imm(imm) = addr {
                    let a = *imm as u64;
                    if (a % LINE_BYTES) + u64::from(*size) > LINE_BYTES {
                        diags.push(loc(
                            inst,
                            format!("access at {a} size {size} straddles a 64-byte line"),
                        ));
                    }
                }
            }
            _ => {}
        }
    }

    validate_paths(f, diags);
    validate_def_before_use(f, diags);
}

/// Successor indices of the instruction at `i`, or None when execution
/// leaves the function there.
fn successors(f: &Function, i: usize) -> Vec<usize> {
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

/// Every path must end in `ret`: no reachable instruction may fall off
/// the end of the body.
fn validate_paths(f: &Function, diags: &mut Vec<Diagnostic>) {
    if f.body.is_empty() {
        diags.push(Diagnostic::new(0, format!("in {}: empty body (no ret)", f.name)));
        return;
    }
    let mut reachable = vec![false; f.body.len()];
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        if reachable[i] {
            continue;
        }
        reachable[i] = true;
        let succ = successors(f, i);
        if succ.is_empty() && !matches!(f.body[i].op, Op::Ret { .. }) {
            diags.push(Diagnostic::new(
                f.body[i].line,
                format!("in {}: control falls off the end without ret", f.name),
            ));
        }
        stack.extend(succ);
    }
}

/// Forward must-defined dataflow: every register must be assigned on
/// every path before it is read.
fn validate_def_before_use(f: &Function, diags: &mut Vec<Diagnostic>) {
    let n = f.body.len();
    if n == 0 {
        return;
    }
    let params: BTreeSet<Reg> = f.params.iter().copied().collect();
    // defined[i] = set known-defined on entry to instruction i.
    let mut defined: Vec<Option<BTreeSet<Reg>>> = vec![None; n];
    defined[0] = Some(params);
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            let Some(inset) = defined[i].clone() else { continue };
            let mut outset = inset;
            for d in f.body[i].op.dsts() {
                outset.insert(d);
            }
            for s in successors(f, i) {
                let merged = match &defined[s] {
                    None => Some(outset.clone()),
                    Some(cur) => {
                        let inter: BTreeSet<Reg> = cur.intersection(&outset).copied().collect();
                        if inter.len() != cur.len() {
                            Some(inter)
                        } else {
                            None
                        }
                    }
                };
                if let Some(m) = merged {
                    defined[s] = Some(m);
                    changed = true;
                }
            }
        }
    }
    let mut reported = BTreeSet::new();
    for i in 0..n {
        let Some(inset) = &defined[i] else { continue };
        for r in f.body[i].op.srcs() {
            if !inset.contains(&r) && reported.insert((i, r)) {
                diags.push(Diagnostic::new(
                    f.body[i].line,
                    format!("in {}: register {r} used before definition", f.name),
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn check(src: &str) -> Vec<Diagnostic> {
        validate(&parse_program(src).unwrap())
    }

    #[test]
    fn well_formed_pointer_chase_passes() {
        let src = "region pool 0 512 remote(1)\nfn main() {\n  r1 = const 0\n  r2 = const 3\n  label loop\n  r1 = load [r1], 8\n  r2 = add r2, -1\n  branch r2, loop\n  ret r1\n}\n";
        assert!(check(src).is_empty(), "{:?}", check(src));
    }

    #[test]
    fn undefined_label_diagnosed() {
        let src = "fn main() {\n  r1 = const 1\n  branch r1, L9\n  ret\n}\n";
        let d = check(src);
        assert!(d.iter().any(|d| d.message.contains("undefined label L9")), "{d:?}");
    }

    #[test]
    fn overlapping_regions_diagnosed() {
        let src = "region a 0 128 local\nregion b 64 128 local\nfn main() { ret }\n";
        let d = check(src);
        assert!(d.iter().any(|d| d.message.contains("region overlap")), "{d:?}");
    }

    #[test]
    fn unaligned_region_diagnosed() {
        let src = "region a 8 128 local\nfn main() { ret }\n";
        let d = check(src);
        assert!(d.iter().any(|d| d.message.contains("not 64-byte aligned")), "{d:?}");
    }

    #[test]
    fn use_before_def_on_one_path_diagnosed() {
        // r3 defined only on the taken path, then read after the merge.
        let src = "fn main(r1) {\n  branch r1, skip\n  r3 = const 5\n  label skip\n  r4 = add r3, 1\n  ret r4\n}\n";
        let d = check(src);
        assert!(d.iter().any(|d| d.message.contains("used before definition")), "{d:?}");
    }

    #[test]
    fn fall_off_end_diagnosed() {
        let src = "fn main() {\n  r1 = const 1\n}\n";
        let d = check(src);
        assert!(d.iter().any(|d| d.message.contains("falls off the end")), "{d:?}");
    }

    #[test]
    fn straddling_constant_access_diagnosed() {
        let src = "region a 0 128 local\nfn main() {\n  r1 = load [60], 8\n  ret r1\n}\n";
        let d = check(src);
        assert!(d.iter().any(|d| d.message.contains("straddles")), "{d:?}");
    }

    #[test]
    fn missing_main_diagnosed() {
        let d = check("fn helper() { ret }\n");
        assert!(d.iter().any(|d| d.message.contains("no function named 'main'")), "{d:?}");
    }
}
