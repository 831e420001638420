//! Canonical text printer. `parse_program(print_program(p))` reproduces
//! `p` exactly, including analyzer annotations.

use super::*;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for r in &p.regions {
        out.push_str(&format!("region {} {} {} {}\n", r.name, r.base, r.len, r.space));
    }
    if !p.regions.is_empty() && !p.functions.is_empty() {
        out.push('\n');
    }
    for (i, f) in p.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let params: Vec<String> = f.params.iter().map(|r| r.to_string()).collect();
        out.push_str(&format!("fn {}({}) {{\n", f.name, params.join(", ")));
        for inst in &f.body {
            out.push_str("  ");
            out.push_str(&print_inst(inst));
            out.push('\n');
        }
        out.push_str("}\n");
    }
    out
}

pub fn print_inst(inst: &Inst) -> String {
    let mut s = print_op(&inst.op);
    if inst.space != SpaceAnnotation::Unanalyzed {
        s.push_str(&format!(" @{}", inst.space));
    }
    s
}

pub fn print_op(op: &Op) -> String {
    match op {
        Op::Const { dst, imm } => format!("{dst} = const {imm}"),
        Op::Add { dst, a, b } => format!("{dst} = add {a}, {b}"),
        Op::Mul { dst, a, b } => format!("{dst} = mul {a}, {b}"),
        Op::Cmp { dst, pred, a, b } => format!("{dst} = cmp.{} {a}, {b}", pred.mnemonic()),
        Op::Load { dst, addr, size } => format!("{dst} = load [{addr}], {size}"),
        Op::Store { addr, src, size } => format!("store [{addr}], {src}, {size}"),
        Op::Branch { cond, target } => format!("branch {cond}, {target}"),
        Op::Jump { target } => format!("jump {target}"),
        Op::Call { dst, func, args } => {
            let mut parts = vec![func.clone()];
            parts.extend(args.iter().map(|a| a.to_string()));
            match dst {
                Some(d) => format!("{d} = call {}", parts.join(", ")),
                None => format!("call {}", parts.join(", ")),
            }
        }
        Op::Ret { val } => match val {
            Some(v) => format!("ret {v}"),
            None => "ret".to_string(),
        },
        Op::Label { name } => format!("label {name}"),
        Op::ProfileLabel { id } => format!("profile_label {id}"),
        Op::SubmitSlice { id, args } => {
            let mut parts = vec![id.to_string()];
            parts.extend(args.iter().map(|r| r.to_string()));
            format!("submit_slice {}", parts.join(", "))
        }
        Op::AwaitMailbox { id, dsts } => {
            let mut parts = vec![id.to_string()];
            parts.extend(dsts.iter().map(|r| r.to_string()));
            format!("await_mailbox {}", parts.join(", "))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn print_parse_round_trip_small() {
        let src = "region a 0 128 local\nregion b 65536 256 remote(1)\n\nfn main() {\n  r1 = const 65536\n  r2 = load [r1], 8 @remote(1)\n  store [r1], r2, 8 @remote(1)\n  branch r2, out\n  r3 = call helper, r2, -4\n  label out\n  ret r2\n}\n\nfn helper(r1, r2) {\n  r3 = add r1, r2\n  ret r3\n}\n";
        let p = parse_program(src).unwrap();
        let printed = print_program(&p);
        let again = parse_program(&printed).unwrap();
        assert_eq!(p, again);
    }
}
