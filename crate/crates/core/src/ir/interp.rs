//! Timing-free reference interpreter: sequential execution with
//! unbounded resources. Its load-value trace is the correctness oracle
//! for every timing model in this workspace.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::image::ImageError;
use super::*;

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("trap at {loc}: {source}")]
    Trap {
        loc: InstrLoc,
        #[source]
        source: ImageError,
    },
    #[error("step budget of {budget} exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("program failed validation: {0}")]
    Invalid(String),
    #[error("at {loc}: {msg}")]
    Malformed { loc: InstrLoc, msg: String },
    #[error("offload instruction at {loc} is not executable here")]
    OffloadOp { loc: InstrLoc },
    #[error("slice {id} trapped: {msg}")]
    SliceTrap { id: u32, msg: String },
}

/// Architectural effects an executed slice hands back at its await.
#[derive(Debug, Clone, Default)]
pub struct SliceFlush {
    pub outs: Vec<u64>,
    /// Load values in slice execution order.
    pub loads: Vec<u64>,
    pub stores: Vec<(u64, Vec<u8>)>,
}

/// Pluggable semantics for `submit_slice`/`await_mailbox`. The plain
/// interpreter uses [`NoOffload`], which rejects both; the offload
/// rewrite supplies an executor that runs slice bodies eagerly.
pub trait SliceExecutor {
    fn submit(
        &mut self,
        id: u32,
        args: &[u64],
        mem: &mut MemoryImage,
        loc: InstrLoc,
    ) -> Result<(), InterpError>;

    fn collect(&mut self, id: u32, loc: InstrLoc) -> Result<SliceFlush, InterpError>;
}

/// Rejects offload instructions; plain programs must not contain them.
pub struct NoOffload;

impl SliceExecutor for NoOffload {
    fn submit(
        &mut self,
        _id: u32,
        _args: &[u64],
        _mem: &mut MemoryImage,
        loc: InstrLoc,
    ) -> Result<(), InterpError> {
        Err(InterpError::OffloadOp { loc })
    }

    fn collect(&mut self, _id: u32, loc: InstrLoc) -> Result<SliceFlush, InterpError> {
        Err(InterpError::OffloadOp { loc })
    }
}

/// One architecturally performed load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadEvent {
    pub loc: InstrLoc,
    pub value: u64,
}

/// The architectural outcome of a run: precisely what any timing model
/// must reproduce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ArchResult {
    pub load_trace: Vec<LoadEvent>,
    pub final_registers: BTreeMap<Reg, u64>,
    pub stores: Vec<(u64, Vec<u8>)>,
    pub ret: Option<u64>,
    pub steps: u64,
}

impl ArchResult {
    pub fn load_values(&self) -> Vec<u64> {
        self.load_trace.iter().map(|e| e.value).collect()
    }
}

struct Frame {
    func: usize,
    pc: usize,
    regs: HashMap<Reg, u64>,
    // Destination register in the caller's frame for the return value.
    ret_dst: Option<Reg>,
}

pub fn interpret(
    p: &Program,
    mem: &MemoryImage,
    inputs: &[(Reg, u64)],
) -> Result<ArchResult, InterpError> {
    interpret_with_budget(p, mem, inputs, DEFAULT_STEP_BUDGET)
}

/// Run `main` to completion against a private copy of `mem`.
pub fn interpret_with_budget(
    p: &Program,
    mem: &MemoryImage,
    inputs: &[(Reg, u64)],
    budget: u64,
) -> Result<ArchResult, InterpError> {
    let mut mem = mem.clone();
    interpret_in_place(p, &mut mem, inputs, budget)
}

/// Like [`interpret_with_budget`] but mutating the caller's image.
pub fn interpret_in_place(
    p: &Program,
    mem: &mut MemoryImage,
    inputs: &[(Reg, u64)],
    budget: u64,
) -> Result<ArchResult, InterpError> {
    interpret_with_executor(p, mem, inputs, budget, &mut NoOffload)
}

/// Full-control entry point: executes against the caller's image with
/// caller-supplied slice semantics.
pub fn interpret_with_executor(
    p: &Program,
    mem: &mut MemoryImage,
    inputs: &[(Reg, u64)],
    budget: u64,
    exec: &mut dyn SliceExecutor,
) -> Result<ArchResult, InterpError> {
    let main_idx = p
        .function_index("main")
        .ok_or_else(|| InterpError::Invalid("no function named 'main'".into()))?;

    let mut regs = HashMap::new();
    for r in &p.functions[main_idx].params {
        regs.insert(*r, 0u64);
    }
    for (r, v) in inputs {
        regs.insert(*r, *v);
    }

    let mut result = ArchResult::default();
    let mut stack = vec![Frame { func: main_idx, pc: 0, regs, ret_dst: None }];

    while let Some(frame) = stack.last_mut() {
        let f = &p.functions[frame.func];
        let loc = InstrLoc { func: frame.func as u32, index: frame.pc as u32 };
        if frame.pc >= f.body.len() {
            return Err(InterpError::Malformed { loc, msg: "control fell off function end".into() });
        }
        result.steps += 1;
        if result.steps > budget {
            return Err(InterpError::BudgetExceeded { budget });
        }

        let inst = &f.body[frame.pc];
        let eval = |regs: &HashMap<Reg, u64>, o: &Operand| -> u64 {
            match o {
                Operand::Reg(r) => *regs.get(r).unwrap_or(&0),
                Operand::Imm(i) => *i as u64,
            }
        };

        match &inst.op {
            Op::Const { dst, imm } => {
                frame.regs.insert(*dst, *imm as u64);
                frame.pc += 1;
            }
            Op::Add { dst, a, b } => {
                let v = eval(&frame.regs, a).wrapping_add(eval(&frame.regs, b));
                frame.regs.insert(*dst, v);
                frame.pc += 1;
            }
            Op::Mul { dst, a, b } => {
                let v = eval(&frame.regs, a).wrapping_mul(eval(&frame.regs, b));
                frame.regs.insert(*dst, v);
                frame.pc += 1;
            }
            Op::Cmp { dst, pred, a, b } => {
                let v = pred.eval(eval(&frame.regs, a), eval(&frame.regs, b));
                frame.regs.insert(*dst, v);
                frame.pc += 1;
            }
            Op::Load { dst, addr, size } => {
                let a = eval(&frame.regs, addr);
                let v = mem.read_value(a, *size).map_err(|e| InterpError::Trap { loc, source: e })?;
                result.load_trace.push(LoadEvent { loc, value: v });
                frame.regs.insert(*dst, v);
                frame.pc += 1;
            }
            Op::Store { addr, src, size } => {
                let a = eval(&frame.regs, addr);
                let v = eval(&frame.regs, src);
                mem.write_value(a, v, *size).map_err(|e| InterpError::Trap { loc, source: e })?;
                let mut bytes = vec![0u8; *size as usize];
                let n = (*size as usize).min(8);
                bytes[..n].copy_from_slice(&v.to_le_bytes()[..n]);
                result.stores.push((a, bytes));
                frame.pc += 1;
            }
            Op::Branch { cond, target } => {
                let taken = *frame.regs.get(cond).unwrap_or(&0) != 0;
                if taken {
                    let t = f.labels.get(target).ok_or_else(|| InterpError::Malformed {
                        loc,
                        msg: format!("undefined label {target}"),
                    })?;
                    frame.pc = *t;
                } else {
                    frame.pc += 1;
                }
            }
            Op::Jump { target } => {
                let t = f.labels.get(target).ok_or_else(|| InterpError::Malformed {
                    loc,
                    msg: format!("undefined label {target}"),
                })?;
                frame.pc = *t;
            }
            Op::Call { dst, func, args } => {
                let callee = p.function_index(func).ok_or_else(|| InterpError::Malformed {
                    loc,
                    msg: format!("undefined function '{func}'"),
                })?;
                let mut callee_regs = HashMap::new();
                for (param, arg) in p.functions[callee].params.iter().zip(args) {
                    callee_regs.insert(*param, eval(&frame.regs, arg));
                }
                frame.pc += 1;
                let ret_dst = *dst;
                stack.push(Frame { func: callee, pc: 0, regs: callee_regs, ret_dst });
            }
            Op::Ret { val } => {
                let v = val.as_ref().map(|o| eval(&frame.regs, o));
                let done = stack.len() == 1;
                if done {
                    let frame = stack.pop().expect("frame");
                    result.final_registers =
                        frame.regs.into_iter().collect::<BTreeMap<Reg, u64>>();
                    result.ret = v;
                    return Ok(result);
                }
                let frame = stack.pop().expect("frame");
                if let (Some(dst), Some(v)) = (frame.ret_dst, v) {
                    stack.last_mut().expect("caller").regs.insert(dst, v);
                }
            }
            Op::Label { .. } | Op::ProfileLabel { .. } => {
                frame.pc += 1;
            }
            Op::SubmitSlice { id, args } => {
                let vals: Vec<u64> = args.iter().map(|r| *frame.regs.get(r).unwrap_or(&0)).collect();
                exec.submit(*id, &vals, mem, loc)?;
                frame.pc += 1;
            }
            Op::AwaitMailbox { id, dsts } => {
                let flush = exec.collect(*id, loc)?;
                for (dst, v) in dsts.iter().zip(flush.outs.iter()) {
                    frame.regs.insert(*dst, *v);
                }
                for v in flush.loads {
                    result.load_trace.push(LoadEvent { loc, value: v });
                }
                result.stores.extend(flush.stores);
                frame.pc += 1;
            }
        }
    }

    Err(InterpError::Invalid("main returned without a ret".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn run(src: &str, img: &MemoryImage) -> ArchResult {
        let p = parse_program(src).unwrap();
        assert!(validate(&p).is_empty(), "{:?}", validate(&p));
        interpret(&p, img, &[]).unwrap()
    }

    #[test]
    fn empty_main_has_no_loads() {
        let r = run("fn main() { ret }\n", &MemoryImage::default());
        assert!(r.load_trace.is_empty());
        assert_eq!(r.ret, None);
    }

    #[test]
    fn three_deep_pointer_chase_trace() {
        // Line A holds pointer B, B holds C, C holds 0.
        let mut img = MemoryImage::new(vec![RegionDecl {
            name: "pool".into(),
            base: 0,
            len: 512,
            space: AddressSpace::Remote(NodeId(1)),
        }]);
        let (a, b, c) = (0u64, 128u64, 320u64);
        img.write_value(a, b, 8).unwrap();
        img.write_value(b, c, 8).unwrap();
        img.write_value(c, 0, 8).unwrap();
        let src = "region pool 0 512 remote(1)\nfn main() {\n  r1 = const 0\n  r1 = load [r1], 8\n  r1 = load [r1], 8\n  r1 = load [r1], 8\n  ret r1\n}\n";
        let r = run(src, &img);
        assert_eq!(r.load_values(), vec![b, c, 0]);
        assert_eq!(r.ret, Some(0));
    }

    #[test]
    fn strided_loads_of_self_addresses() {
        let mut img = MemoryImage::new(vec![RegionDecl {
            name: "pool".into(),
            base: 0,
            len: 256,
            space: AddressSpace::Local,
        }]);
        for addr in [0u64, 64, 128] {
            img.write_value(addr, addr, 8).unwrap();
        }
        let src = "region pool 0 256 local\nfn main() {\n  r1 = load [0], 8\n  r2 = load [64], 8\n  r3 = load [128], 8\n  ret r3\n}\n";
        let r = run(src, &img);
        assert_eq!(r.load_values(), vec![0, 64, 128]);
    }

    #[test]
    fn out_of_region_access_traps_with_location() {
        let src = "region pool 0 128 local\nfn main() {\n  r1 = load [4096], 8\n  ret r1\n}\n";
        let p = parse_program(src).unwrap();
        let err = interpret(&p, &MemoryImage::new(p.regions.clone()), &[]).unwrap_err();
        match err {
            InterpError::Trap { loc, .. } => assert_eq!(loc, InstrLoc { func: 0, index: 0 }),
            other => panic!("expected trap, got {other}"),
        }
    }

    #[test]
    fn budget_guards_non_termination() {
        let src = "fn main() {\n  r1 = const 1\n  label spin\n  branch r1, spin\n  ret\n}\n";
        let p = parse_program(src).unwrap();
        let err = interpret_with_budget(&p, &MemoryImage::default(), &[], 1000).unwrap_err();
        assert!(matches!(err, InterpError::BudgetExceeded { .. }));
    }

    #[test]
    fn call_and_return_value() {
        let src = "fn main() {\n  r1 = call double, 21\n  ret r1\n}\nfn double(r1) {\n  r2 = mul r1, 2\n  ret r2\n}\n";
        let r = run(src, &MemoryImage::default());
        assert_eq!(r.ret, Some(42));
    }

    #[test]
    fn determinism_byte_for_byte() {
        let mut img = MemoryImage::new(vec![RegionDecl {
            name: "pool".into(),
            base: 0,
            len: 256,
            space: AddressSpace::Local,
        }]);
        img.write_value(0, 7, 8).unwrap();
        let src = "region pool 0 256 local\nfn main() {\n  r1 = load [0], 8\n  store [64], r1, 8\n  ret r1\n}\n";
        let p = parse_program(src).unwrap();
        let a = interpret(&p, &img, &[]).unwrap();
        let b = interpret(&p, &img, &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }

    #[test]
    fn offload_ops_rejected() {
        let src = "fn main() {\n  r1 = const 1\n  submit_slice 0, r1\n  await_mailbox 0, r2\n  ret r2\n}\n";
        let p = parse_program(src).unwrap();
        let err = interpret(&p, &MemoryImage::default(), &[]).unwrap_err();
        assert!(matches!(err, InterpError::OffloadOp { .. }));
    }
}
