//! The mini-IR: a small typed register language with explicit memory
//! regions. Programs are line-oriented text (see the grammar in the
//! README); memory is a sparse set of 64-byte lines grouped into
//! declared regions that are either host-local or owned by a remote
//! endpoint.
//!
//! Everything here is timing-free. The interpreter in [`interp`] is the
//! functional oracle that every simulation mode is checked against.

pub mod image;
pub mod interp;
pub mod parse;
pub mod print;
pub mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use image::MemoryImage;
pub use interp::{
    interpret, interpret_with_budget, interpret_with_executor, ArchResult, InterpError,
    LoadEvent, NoOffload, SliceExecutor, SliceFlush,
};
pub use parse::{parse_program, Diagnostic};
pub use print::print_program;
pub use validate::validate;

/// Cache line size in bytes. Every region and every memory transfer is
/// aligned to and granulated in lines of this size.
pub const LINE_BYTES: u64 = 64;

/// Default interpreter step budget.
pub const DEFAULT_STEP_BUDGET: u64 = 100_000_000;

/// A node in the fabric topology. Node 0 is conventionally the host
/// root complex, but any numbering is accepted.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// A virtual register, written `r<N>` in the text form.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Reg(pub u32);

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Register or immediate operand. Immediates are signed and wrap into
/// the unsigned 64-bit value domain when evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Reg(Reg),
    Imm(i64),
}

impl Operand {
    pub fn as_reg(&self) -> Option<Reg> {
        match self {
            Operand::Reg(r) => Some(*r),
            Operand::Imm(_) => None,
        }
    }

    pub fn as_imm(&self) -> Option<i64> {
        match self {
            Operand::Reg(_) => None,
            Operand::Imm(i) => Some(*i),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(i) => write!(f, "{i}"),
        }
    }
}

/// Unsigned comparison predicate for `cmp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pred {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Pred {
    pub fn eval(self, a: u64, b: u64) -> u64 {
        let hit = match self {
            Pred::Eq => a == b,
            Pred::Ne => a != b,
            Pred::Lt => a < b,
            Pred::Le => a <= b,
            Pred::Gt => a > b,
            Pred::Ge => a >= b,
        };
        hit as u64
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Pred::Eq => "eq",
            Pred::Ne => "ne",
            Pred::Lt => "lt",
            Pred::Le => "le",
            Pred::Gt => "gt",
            Pred::Ge => "ge",
        }
    }
}

/// Instruction payload. Arithmetic wraps on u64; `cmp` yields 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Const { dst: Reg, imm: i64 },
    Add { dst: Reg, a: Operand, b: Operand },
    Mul { dst: Reg, a: Operand, b: Operand },
    Cmp { dst: Reg, pred: Pred, a: Operand, b: Operand },
    /// Load `size` bytes (1..=64, non-straddling) from the line holding
    /// `addr`; the register value is the first min(size, 8) bytes, LE.
    Load { dst: Reg, addr: Operand, size: u8 },
    /// Store the low min(size, 8) bytes of `src` (zero padded to `size`).
    Store { addr: Operand, src: Operand, size: u8 },
    /// Conditional: taken when `cond != 0`.
    Branch { cond: Reg, target: String },
    Jump { target: String },
    Call { dst: Option<Reg>, func: String, args: Vec<Operand> },
    Ret { val: Option<Operand> },
    Label { name: String },
    ProfileLabel { id: u32 },
    /// Ship a slice's live-ins to its offload site. Only emitted by the
    /// offload rewrite.
    SubmitSlice { id: u32, args: Vec<Reg> },
    /// Park until the slice's results arrive, then bind its live-outs.
    AwaitMailbox { id: u32, dsts: Vec<Reg> },
}

impl Op {
    /// Register written by this instruction, if any. `await_mailbox` can
    /// write several and is reported via `dsts()`.
    pub fn dst(&self) -> Option<Reg> {
        match self {
            Op::Const { dst, .. }
            | Op::Add { dst, .. }
            | Op::Mul { dst, .. }
            | Op::Cmp { dst, .. }
            | Op::Load { dst, .. } => Some(*dst),
            Op::Call { dst, .. } => *dst,
            _ => None,
        }
    }

    /// All registers written by this instruction.
    pub fn dsts(&self) -> Vec<Reg> {
        match self {
            Op::AwaitMailbox { dsts, .. } => dsts.clone(),
            other => other.dst().into_iter().collect(),
        }
    }

    /// All registers read by this instruction.
    pub fn srcs(&self) -> Vec<Reg> {
        let mut out = Vec::new();
        let mut push = |o: &Operand| {
            if let Operand::Reg(r) = o {
                out.push(*r);
            }
        };
        match self {
            Op::Const { .. } | Op::Label { .. } | Op::ProfileLabel { .. } | Op::Jump { .. } => {}
            Op::Add { a, b, .. } | Op::Mul { a, b, .. } | Op::Cmp { a, b, .. } => {
                push(a);
                push(b);
            }
            Op::Load { addr, .. } => push(addr),
            Op::Store { addr, src, .. } => {
                push(addr);
                push(src);
            }
            Op::Branch { cond, .. } => out.push(*cond),
            Op::Call { args, .. } => args.iter().for_each(|a| {
                if let Operand::Reg(r) = a {
                    out.push(*r);
                }
            }),
            Op::Ret { val } => {
                if let Some(v) = val {
                    push(v);
                }
            }
            Op::SubmitSlice { args, .. } => out.extend(args.iter().copied()),
            Op::AwaitMailbox { .. } => {}
        }
        out
    }

    pub fn is_load(&self) -> bool {
        matches!(self, Op::Load { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, Op::Store { .. })
    }

    pub fn is_memory(&self) -> bool {
        self.is_load() || self.is_store()
    }

    /// Markers that occupy no pipeline slot.
    pub fn is_marker(&self) -> bool {
        matches!(self, Op::Label { .. } | Op::ProfileLabel { .. })
    }
}

/// Address-space annotation attached to loads and stores by the
/// analyzer. Fresh programs carry `Unanalyzed` on every access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SpaceAnnotation {
    #[default]
    Unanalyzed,
    Local,
    Remote(NodeId),
    Unknown,
}

impl fmt::Display for SpaceAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceAnnotation::Unanalyzed => write!(f, "unanalyzed"),
            SpaceAnnotation::Local => write!(f, "local"),
            SpaceAnnotation::Remote(n) => write!(f, "remote({})", n.0),
            SpaceAnnotation::Unknown => write!(f, "unknown"),
        }
    }
}

/// One instruction plus its analysis annotation and source line (0 for
/// synthesized instructions).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inst {
    pub op: Op,
    pub space: SpaceAnnotation,
    pub line: u32,
}

impl Inst {
    pub fn new(op: Op) -> Self {
        Inst { op, space: SpaceAnnotation::Unanalyzed, line: 0 }
    }
}

/// Which address space a region lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AddressSpace {
    Local,
    Remote(NodeId),
}

impl fmt::Display for AddressSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddressSpace::Local => write!(f, "local"),
            AddressSpace::Remote(n) => write!(f, "remote({})", n.0),
        }
    }
}

/// A declared memory region: a 64-byte aligned byte range tagged with
/// the space that owns it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionDecl {
    pub name: String,
    pub base: u64,
    pub len: u64,
    pub space: AddressSpace,
}

impl RegionDecl {
    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.base + self.len
    }

    pub fn end(&self) -> u64 {
        self.base + self.len
    }
}

/// A function: named, with positional register parameters and a flat
/// instruction body. `labels` maps label name to the index of its
/// `label` instruction and is kept in sync by the constructors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Function {
    pub name: String,
    pub params: Vec<Reg>,
    pub body: Vec<Inst>,
    pub labels: BTreeMap<String, usize>,
}

impl Function {
    pub fn new(name: impl Into<String>, params: Vec<Reg>, body: Vec<Inst>) -> Self {
        let mut f = Function { name: name.into(), params, body, labels: BTreeMap::new() };
        f.rebuild_labels();
        f
    }

    /// Recompute the label index after any body edit.
    pub fn rebuild_labels(&mut self) {
        self.labels.clear();
        for (i, inst) in self.body.iter().enumerate() {
            if let Op::Label { name } = &inst.op {
                self.labels.insert(name.clone(), i);
            }
        }
    }
}

/// A whole program: functions plus region declarations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Program {
    pub functions: Vec<Function>,
    pub regions: Vec<RegionDecl>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn main(&self) -> Option<&Function> {
        self.function("main")
    }

    /// Region containing `addr`, if any.
    pub fn region_of(&self, addr: u64) -> Option<&RegionDecl> {
        self.regions.iter().find(|r| r.contains(addr))
    }
}

/// Locates one static instruction: function index and body index.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct InstrLoc {
    pub func: u32,
    pub index: u32,
}

impl fmt::Display for InstrLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}:{}", self.func, self.index)
    }
}
