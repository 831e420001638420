//! Line-oriented parser for the IR text form.
//!
//! Grammar sketch (one construct per line, `#` starts a comment):
//!
//! ```text
//! region <name> <base> <len> <local|remote(N)>
//! fn <name>(<r0, r1, ...>) {
//!   r2 = const 42
//!   r3 = add r2, 8
//!   r4 = mul r3, r2
//!   r5 = cmp.lt r3, r4
//!   r6 = load [r3], 8
//!   store [r3], r6, 8
//!   branch r5, done
//!   jump loop
//!   label done
//!   r7 = call helper, r6, 3
//!   ret r7
//!   profile_label 4
//!   submit_slice 0, r1, r2
//!   await_mailbox 0, r3
//! }
//! ```
//!
//! Numbers are decimal or `0x` hex; immediates may be negative. Loads
//! and stores annotated by the analyzer print an `@space` suffix, which
//! this parser also accepts so that printing round-trips.

use super::*;

/// A parse or validation problem, carrying the 1-based source line
/// where one is known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: u32,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: u32, message: impl Into<String>) -> Self {
        Diagnostic { line, message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

/// Parse a whole program. On success the result still needs
/// [`validate`](super::validate::validate) for the semantic invariants;
/// this layer only rejects malformed syntax.
pub fn parse_program(text: &str) -> Result<Program, Vec<Diagnostic>> {
    let mut program = Program::default();
    let mut diags = Vec::new();
    let mut current: Option<Function> = None;

    for (lineno, line) in fragments(text) {

        if let Some(rest) = line.as_str().strip_prefix("region ") {
            if current.is_some() {
                diags.push(Diagnostic::new(lineno, "region declaration inside function body"));
                continue;
            }
            match parse_region(rest.trim()) {
                Ok(r) => program.regions.push(r),
                Err(msg) => diags.push(Diagnostic::new(lineno, msg)),
            }
            continue;
        }

        if let Some(rest) = line.as_str().strip_prefix("fn ") {
            if current.is_some() {
                diags.push(Diagnostic::new(lineno, "nested function definition"));
                continue;
            }
            match parse_fn_header(rest.trim()) {
                Ok((name, params)) => current = Some(Function::new(name, params, Vec::new())),
                Err(msg) => diags.push(Diagnostic::new(lineno, msg)),
            }
            continue;
        }

        if line == "}" {
            match current.take() {
                Some(mut f) => {
                    f.rebuild_labels();
                    program.functions.push(f);
                }
                None => diags.push(Diagnostic::new(lineno, "unmatched closing brace")),
            }
            continue;
        }

        match current.as_mut() {
            Some(f) => match parse_instruction(&line) {
                Ok(op) => {
                    let mut inst = Inst::new(op.0);
                    inst.space = op.1;
                    inst.line = lineno;
                    f.body.push(inst);
                }
                Err(msg) => diags.push(Diagnostic::new(lineno, msg)),
            },
            None => diags.push(Diagnostic::new(lineno, "instruction outside function body")),
        }
    }

    if let Some(f) = current {
        diags.push(Diagnostic::new(
            text.lines().count() as u32,
            format!("unterminated function '{}'", f.name),
        ));
    }

    if diags.is_empty() {
        Ok(program)
    } else {
        Err(diags)
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Split source text into (line number, construct) fragments. A
/// construct is a region line, a `fn ... {` header, one instruction,
/// or a closing `}`. Instructions may share a line separated by `;`,
/// and a function may open and close on a single line.
fn fragments(text: &str) -> Vec<(u32, String)> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = (idx + 1) as u32;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        for seg in line.split(';') {
            let mut s = seg.trim();
            if s.is_empty() {
                continue;
            }
            if let Some(brace) = s.find('{') {
                out.push((lineno, s[..=brace].trim().to_string()));
                s = s[brace + 1..].trim();
                if s.is_empty() {
                    continue;
                }
            }
            while let Some(stripped) = s.strip_suffix('}') {
                let body = stripped.trim();
                if !body.is_empty() {
                    // `ret r1 }` — emit the instruction, then the close.
                    out.push((lineno, body.to_string()));
                }
                out.push((lineno, "}".to_string()));
                s = "";
                let _ = body;
                break;
            }
            if !s.is_empty() {
                out.push((lineno, s.to_string()));
            }
        }
    }
    out
}

fn parse_region(rest: &str) -> Result<RegionDecl, String> {
    let toks: Vec<&str> = rest.split_whitespace().collect();
    if toks.len() != 4 {
        return Err("malformed region: expected `region <name> <base> <len> <space>`".into());
    }
    let name = parse_ident(toks[0])?;
    let base = parse_u64(toks[1])?;
    let len = parse_u64(toks[2])?;
    let space = parse_space(toks[3])?;
    Ok(RegionDecl { name, base, len, space })
}

fn parse_space(tok: &str) -> Result<AddressSpace, String> {
    if tok == "local" {
        return Ok(AddressSpace::Local);
    }
    if let Some(inner) = tok.strip_prefix("remote(").and_then(|s| s.strip_suffix(')')) {
        let id: u32 = inner.parse().map_err(|_| format!("malformed endpoint id '{inner}'"))?;
        return Ok(AddressSpace::Remote(NodeId(id)));
    }
    Err(format!("unknown address space '{tok}' (expected local or remote(N))"))
}

fn parse_annotation(tok: &str) -> Result<SpaceAnnotation, String> {
    match tok {
        "local" => Ok(SpaceAnnotation::Local),
        "unknown" => Ok(SpaceAnnotation::Unknown),
        "unanalyzed" => Ok(SpaceAnnotation::Unanalyzed),
        other => {
            if let Some(inner) = other.strip_prefix("remote(").and_then(|s| s.strip_suffix(')')) {
                let id: u32 =
                    inner.parse().map_err(|_| format!("malformed endpoint id '{inner}'"))?;
                Ok(SpaceAnnotation::Remote(NodeId(id)))
            } else {
                Err(format!("unknown annotation '@{other}'"))
            }
        }
    }
}

fn parse_fn_header(rest: &str) -> Result<(String, Vec<Reg>), String> {
    let open = rest.find('(').ok_or("malformed function header: missing '('")?;
    let close = rest.rfind(')').ok_or("malformed function header: missing ')'")?;
    if close < open || !rest[close + 1..].trim_start().starts_with('{') {
        return Err("malformed function header: expected `fn name(params) {`".into());
    }
    let name = parse_ident(rest[..open].trim())?;
    let params_src = rest[open + 1..close].trim();
    let mut params = Vec::new();
    if !params_src.is_empty() {
        for p in params_src.split(',') {
            params.push(parse_reg(p.trim())?);
        }
    }
    Ok((name, params))
}

fn parse_ident(tok: &str) -> Result<String, String> {
    let ok = !tok.is_empty()
        && tok.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && tok.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !ok {
        return Err(format!("malformed identifier '{tok}'"));
    }
    if parse_reg(tok).is_ok() {
        return Err(format!("identifier '{tok}' collides with a register name"));
    }
    Ok(tok.to_string())
}

fn parse_reg(tok: &str) -> Result<Reg, String> {
    let digits = tok.strip_prefix('r').ok_or_else(|| format!("malformed register '{tok}'"))?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("malformed register '{tok}'"));
    }
    digits.parse::<u32>().map(Reg).map_err(|_| format!("register index out of range '{tok}'"))
}

fn parse_u64(tok: &str) -> Result<u64, String> {
    let r = if let Some(hex) = tok.strip_prefix("0x") {
        u64::from_str_radix(hex, 16)
    } else {
        tok.parse::<u64>()
    };
    r.map_err(|_| format!("malformed number '{tok}'"))
}

fn parse_imm(tok: &str) -> Result<i64, String> {
    if let Some(rest) = tok.strip_prefix('-') {
        let v = parse_u64(rest)?;
        if v > (i64::MAX as u64) + 1 {
            return Err(format!("immediate out of range '{tok}'"));
        }
        Ok((v as i64).wrapping_neg())
    } else {
        parse_u64(tok).map(|v| v as i64)
    }
}

fn parse_operand(tok: &str) -> Result<Operand, String> {
    if tok.starts_with('r') && parse_reg(tok).is_ok() {
        Ok(Operand::Reg(parse_reg(tok)?))
    } else {
        parse_imm(tok).map(Operand::Imm).map_err(|_| format!("malformed operand '{tok}'"))
    }
}

/// Split a comma-separated operand list, tolerating empty input.
fn split_args(rest: &str) -> Vec<String> {
    let rest = rest.trim();
    if rest.is_empty() {
        return Vec::new();
    }
    rest.split(',').map(|s| s.trim().to_string()).collect()
}

fn parse_bracketed_addr(tok: &str) -> Result<Operand, String> {
    let inner = tok
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("malformed address '{tok}' (expected [reg] or [imm])"))?;
    parse_operand(inner.trim())
}

/// Parse one instruction line. Returns the op plus any `@space`
/// annotation suffix (defaults to `Unanalyzed`).
fn parse_instruction(line: &str) -> Result<(Op, SpaceAnnotation), String> {
    let (line, space) = match line.rfind('@') {
        Some(i) => {
            let ann = parse_annotation(line[i + 1..].trim())?;
            (line[..i].trim_end(), ann)
        }
        None => (line, SpaceAnnotation::Unanalyzed),
    };

    if let Some(eq) = line.find('=') {
        let dst = parse_reg(line[..eq].trim())?;
        let rhs = line[eq + 1..].trim();
        let (mnemonic, rest) = split_mnemonic(rhs);
        let op = match mnemonic {
            "const" => Op::Const { dst, imm: parse_imm(rest.trim())? },
            "add" | "mul" => {
                let args = split_args(rest);
                if args.len() != 2 {
                    return Err(format!("{mnemonic} expects two operands"));
                }
                let a = parse_operand(&args[0])?;
                let b = parse_operand(&args[1])?;
                if mnemonic == "add" {
                    Op::Add { dst, a, b }
                } else {
                    Op::Mul { dst, a, b }
                }
            }
            "load" => {
                let args = split_args(rest);
                if args.is_empty() || args.len() > 2 {
                    return Err("load expects `[addr], size`".into());
                }
                let addr = parse_bracketed_addr(&args[0])?;
                let size = if args.len() == 2 { parse_u64(&args[1])? } else { 8 };
                if size == 0 || size > LINE_BYTES {
                    return Err(format!("load size {size} out of range 1..=64"));
                }
                Op::Load { dst, addr, size: size as u8 }
            }
            "call" => {
                let args = split_args(rest);
                if args.is_empty() {
                    return Err("call expects a function name".into());
                }
                let func = parse_ident(&args[0])?;
                let mut call_args = Vec::new();
                for a in &args[1..] {
                    call_args.push(parse_operand(a)?);
                }
                Op::Call { dst: Some(dst), func, args: call_args }
            }
            m if m.starts_with("cmp") => {
                let pred = match m.strip_prefix("cmp.") {
                    Some("eq") => Pred::Eq,
                    Some("ne") => Pred::Ne,
                    Some("lt") => Pred::Lt,
                    Some("le") => Pred::Le,
                    Some("gt") => Pred::Gt,
                    Some("ge") => Pred::Ge,
                    _ => return Err(format!("unknown opcode '{m}'")),
                };
                let args = split_args(rest);
                if args.len() != 2 {
                    return Err("cmp expects two operands".into());
                }
                Op::Cmp { dst, pred, a: parse_operand(&args[0])?, b: parse_operand(&args[1])? }
            }
            other => return Err(format!("unknown opcode '{other}'")),
        };
        return Ok((op, space));
    }

    let (mnemonic, rest) = split_mnemonic(line);
    let op = match mnemonic {
        "store" => {
            let args = split_args(rest);
            if args.len() < 2 || args.len() > 3 {
                return Err("store expects `[addr], src, size`".into());
            }
            let addr = parse_bracketed_addr(&args[0])?;
            let src = parse_operand(&args[1])?;
            let size = if args.len() == 3 { parse_u64(&args[2])? } else { 8 };
            if size == 0 || size > LINE_BYTES {
                return Err(format!("store size {size} out of range 1..=64"));
            }
            Op::Store { addr, src, size: size as u8 }
        }
        "branch" => {
            let args = split_args(rest);
            if args.len() != 2 {
                return Err("branch expects `cond, label`".into());
            }
            Op::Branch { cond: parse_reg(&args[0])?, target: parse_ident(&args[1])? }
        }
        "jump" => Op::Jump { target: parse_ident(rest.trim())? },
        "label" => Op::Label { name: parse_ident(rest.trim())? },
        "ret" => {
            let rest = rest.trim();
            if rest.is_empty() {
                Op::Ret { val: None }
            } else {
                Op::Ret { val: Some(parse_operand(rest)?) }
            }
        }
        "profile_label" => {
            Op::ProfileLabel { id: parse_u64(rest.trim())? as u32 }
        }
        "submit_slice" => {
            let args = split_args(rest);
            if args.is_empty() {
                return Err("submit_slice expects `id, live_ins...`".into());
            }
            let id = parse_u64(&args[0])? as u32;
            let mut regs = Vec::new();
            for a in &args[1..] {
                regs.push(parse_reg(a)?);
            }
            Op::SubmitSlice { id, args: regs }
        }
        "await_mailbox" => {
            let args = split_args(rest);
            if args.is_empty() {
                return Err("await_mailbox expects `id, live_outs...`".into());
            }
            let id = parse_u64(&args[0])? as u32;
            let mut regs = Vec::new();
            for a in &args[1..] {
                regs.push(parse_reg(a)?);
            }
            Op::AwaitMailbox { id, dsts: regs }
        }
        "call" => {
            let args = split_args(rest);
            if args.is_empty() {
                return Err("call expects a function name".into());
            }
            let func = parse_ident(&args[0])?;
            let mut call_args = Vec::new();
            for a in &args[1..] {
                call_args.push(parse_operand(a)?);
            }
            Op::Call { dst: None, func, args: call_args }
        }
        other => return Err(format!("unknown opcode '{other}'")),
    };
    Ok((op, space))
}

fn split_mnemonic(s: &str) -> (&str, &str) {
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_empty_program() {
        let p = parse_program("").unwrap();
        assert_eq!(p.functions.len(), 0);
        assert_eq!(p.regions.len(), 0);
    }

    #[test]
    fn two_line_function() {
        let p = parse_program("fn main() {\n  r1 = const 7\n  ret r1\n}\n").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].body.len(), 2);
    }

    #[test]
    fn unknown_opcode_is_diagnosed_with_line() {
        let err = parse_program("fn main() {\n  r1 = frobnicate r2\n  ret\n}\n").unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].line, 2);
        assert!(err[0].message.contains("unknown opcode"), "{}", err[0].message);
    }

    #[test]
    fn region_and_annotation_round() {
        let src = "region pool 65536 4096 remote(2)\nfn main() {\n  r1 = load [65600], 8 @remote(2)\n  ret r1\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.regions[0].space, AddressSpace::Remote(NodeId(2)));
        assert_eq!(p.functions[0].body[0].space, SpaceAnnotation::Remote(NodeId(2)));
    }

    #[test]
    fn negative_immediates() {
        let p = parse_program("fn main() {\n  r1 = const -1\n  r2 = add r1, -63\n  ret r2\n}\n")
            .unwrap();
        match &p.functions[0].body[0].op {
            Op::Const { imm, .. } => assert_eq!(*imm, -1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_operand_reported_not_crashed() {
        let err = parse_program("fn main() {\n  r1 = add r2,\n  ret\n}\n").unwrap_err();
        assert!(err[0].message.contains("malformed operand") || err[0].message.contains("two"));
    }
}
