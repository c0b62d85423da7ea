//! The mini-IR: an annotated, ownership-aware instruction stream.
//!
//! Programs are built by [`parse_program`] or by hand, checked with
//! [`validate_program`], and rendered back with [`print_program`].

mod kinds;
mod parse;
pub(crate) mod print;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use kinds::{infer_kinds, result_kind, KindMap};
pub use parse::{parse_program, ParseError};
pub use print::{print_function, print_instruction, print_program};
pub use validate::{rawptr_required, validate_program, Diagnostic, Rule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Owner,
    Raw,
    Scalar,
    Func,
}

impl ValueKind {
    pub fn is_pointer(self) -> bool {
        matches!(self, ValueKind::Owner | ValueKind::Raw)
    }

    pub fn keyword(self) -> &'static str {
        match self {
            ValueKind::Owner => "owner",
            ValueKind::Raw => "raw",
            ValueKind::Scalar => "scalar",
            ValueKind::Func => "func",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Some(match s {
            "owner" => ValueKind::Owner,
            "raw" => ValueKind::Raw,
            "scalar" => ValueKind::Scalar,
            "func" => ValueKind::Func,
            _ => return None,
        })
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Parameter kinds plus return kind. Indirect calls match on exact equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub params: Vec<ValueKind>,
    pub ret: Option<ValueKind>,
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sig(")?;
        for (i, k) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(k.keyword())?;
        }
        if let Some(r) = self.ret {
            write!(f, "->{r}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(String),
    Func(String),
    Int(i64),
}

impl Operand {
    pub fn value(&self) -> Option<&str> {
        match self {
            Operand::Value(v) => Some(v),
            _ => None,
        }
    }
}

/// Unchecked arithmetic flavours. `Forward`/`Backward` are the
/// `Step::forward_unchecked`/`backward_unchecked` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Neg,
    Shl,
    Shr,
    Forward,
    Backward,
}

impl ArithOp {
    pub const ALL: [ArithOp; 8] = [
        ArithOp::Add,
        ArithOp::Sub,
        ArithOp::Mul,
        ArithOp::Neg,
        ArithOp::Shl,
        ArithOp::Shr,
        ArithOp::Forward,
        ArithOp::Backward,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Mul => "mul",
            ArithOp::Neg => "neg",
            ArithOp::Shl => "shl",
            ArithOp::Shr => "shr",
            ArithOp::Forward => "forward",
            ArithOp::Backward => "backward",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        ArithOp::ALL.into_iter().find(|op| op.keyword() == s)
    }

    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            ArithOp::Add | ArithOp::Forward => a.wrapping_add(b),
            ArithOp::Sub | ArithOp::Backward => a.wrapping_sub(b),
            ArithOp::Mul => a.wrapping_mul(b),
            ArithOp::Neg => a.wrapping_neg(),
            ArithOp::Shl => a.wrapping_shl((b & 63) as u32),
            ArithOp::Shr => a.wrapping_shr((b & 63) as u32),
        }
    }
}

/// `%obj.field`; the field is the text after the last dot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldRef {
    pub object: String,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Op {
    HeapAlloc { count: Operand },
    HeapAllocUninit { count: Operand },
    VecNew { capacity: Operand, len: Operand },
    VecPush { vec: String },
    VecPop { vec: String },
    SetLen { vec: String, len: Operand },
    Unchecked { lhs: Operand, op: ArithOp, rhs: Option<Operand> },
    AsRaw { src: String, count: Option<Operand> },
    RawAlloc { count: Operand },
    BoxFromRaw { src: String },
    Gep { ptr: String, delta: Operand },
    Copy { src: Operand },
    StoreField { target: FieldRef, value: Operand },
    LoadField { source: FieldRef, kind: ValueKind },
    Move { src: String },
    Drop { owner: String },
    Forget { owner: String },
    EndScope { owner: String },
    DerefRead { ptr: String },
    DerefWrite { ptr: String, value: Operand },
    Null,
    Call { callee: String, args: Vec<Operand> },
    ICall { target: String, args: Vec<Operand>, sig: Signature },
    Ret { value: Option<Operand> },
    Br { label: String },
    Cbr { cond: Operand, then_label: String, else_label: String },
}

impl Op {
    pub fn opcode(&self) -> &'static str {
        match self {
            Op::HeapAlloc { .. } => "heap_alloc",
            Op::HeapAllocUninit { .. } => "heap_alloc_uninit",
            Op::VecNew { .. } => "vec_new",
            Op::VecPush { .. } => "vec_push",
            Op::VecPop { .. } => "vec_pop",
            Op::SetLen { .. } => "api_set_len",
            Op::Unchecked { .. } => "api_unchecked",
            Op::AsRaw { .. } => "as_raw",
            Op::RawAlloc { .. } => "raw_alloc",
            Op::BoxFromRaw { .. } => "box_from_raw",
            Op::Gep { .. } => "gep",
            Op::Copy { .. } => "copy",
            Op::StoreField { .. } => "store_field",
            Op::LoadField { .. } => "load_field",
            Op::Move { .. } => "move",
            Op::Drop { .. } => "drop",
            Op::Forget { .. } => "forget",
            Op::EndScope { .. } => "end_scope",
            Op::DerefRead { .. } => "deref_read",
            Op::DerefWrite { .. } => "deref_write",
            Op::Null => "null",
            Op::Call { .. } => "call",
            Op::ICall { .. } => "icall",
            Op::Ret { .. } => "ret",
            Op::Br { .. } => "br",
            Op::Cbr { .. } => "cbr",
        }
    }

    /// Every operand in source order, with named values wrapped as
    /// `Operand::Value`. Field objects and icall targets are included.
    pub fn operands(&self) -> Vec<Operand> {
        let v = |s: &String| Operand::Value(s.clone());
        match self {
            Op::HeapAlloc { count } | Op::HeapAllocUninit { count } | Op::RawAlloc { count } => {
                vec![count.clone()]
            }
            Op::VecNew { capacity, len } => vec![capacity.clone(), len.clone()],
            Op::VecPush { vec } | Op::VecPop { vec } => vec![v(vec)],
            Op::SetLen { vec, len } => vec![v(vec), len.clone()],
            Op::Unchecked { lhs, rhs, .. } => {
                let mut out = vec![lhs.clone()];
                out.extend(rhs.clone());
                out
            }
            Op::AsRaw { src, count } => {
                let mut out = vec![v(src)];
                out.extend(count.clone());
                out
            }
            Op::BoxFromRaw { src } | Op::Move { src } => vec![v(src)],
            Op::Gep { ptr, delta } => vec![v(ptr), delta.clone()],
            Op::Copy { src } => vec![src.clone()],
            Op::StoreField { target, value } => vec![v(&target.object), value.clone()],
            Op::LoadField { source, .. } => vec![v(&source.object)],
            Op::Drop { owner } | Op::Forget { owner } | Op::EndScope { owner } => vec![v(owner)],
            Op::DerefRead { ptr } => vec![v(ptr)],
            Op::DerefWrite { ptr, value } => vec![v(ptr), value.clone()],
            Op::Null | Op::Br { .. } => vec![],
            Op::Call { args, .. } => args.clone(),
            Op::ICall { target, args, .. } => {
                let mut out = vec![v(target)];
                out.extend(args.iter().cloned());
                out
            }
            Op::Ret { value } => value.iter().cloned().collect(),
            Op::Cbr { cond, .. } => vec![cond.clone()],
        }
    }

    /// Named values read by this instruction.
    pub fn used_values(&self) -> Vec<String> {
        self.operands()
            .into_iter()
            .filter_map(|o| match o {
                Operand::Value(v) => Some(v),
                _ => None,
            })
            .collect()
    }

    /// The pointer whose referent is read or written.
    pub fn deref_pointer(&self) -> Option<&str> {
        match self {
            Op::DerefRead { ptr } | Op::DerefWrite { ptr, .. } => Some(ptr),
            _ => None,
        }
    }

    /// drop, forget and end_scope.
    pub fn dealloc_owner(&self) -> Option<&str> {
        match self {
            Op::Drop { owner } | Op::Forget { owner } | Op::EndScope { owner } => Some(owner),
            _ => None,
        }
    }

    /// vec_push, vec_pop and api_set_len.
    pub fn modified_container(&self) -> Option<&str> {
        match self {
            Op::VecPush { vec } | Op::VecPop { vec } | Op::SetLen { vec, .. } => Some(vec),
            _ => None,
        }
    }

    /// Source of a single-operand pointer derivation (copy, gep, as_raw,
    /// box_from_raw, move). Field, call and return transfers are not here.
    pub fn derivation_source(&self) -> Option<&str> {
        match self {
            Op::Copy { src: Operand::Value(s) } => Some(s),
            Op::Gep { ptr, .. } => Some(ptr),
            Op::AsRaw { src, .. } | Op::BoxFromRaw { src } | Op::Move { src } => Some(src),
            _ => None,
        }
    }

    pub fn is_allocation(&self) -> bool {
        matches!(
            self,
            Op::HeapAlloc { .. } | Op::HeapAllocUninit { .. } | Op::VecNew { .. } | Op::RawAlloc { .. }
        )
    }

    pub fn branch_targets(&self) -> Vec<&str> {
        match self {
            Op::Br { label } => vec![label],
            Op::Cbr { then_label, else_label, .. } => vec![then_label, else_label],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Attrs {
    pub unsafe_code: bool,
    pub rawptr: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub result: Option<String>,
    pub op: Op,
    pub attrs: Attrs,
}

impl Instruction {
    pub fn new(result: Option<&str>, op: Op) -> Self {
        Instruction { result: result.map(str::to_string), op, attrs: Attrs::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub kind: ValueKind,
}

/// A label names the position of the instruction that follows it;
/// `index == body.len()` marks the end of the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Label {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<ValueKind>,
    pub entry: bool,
    pub address_taken: bool,
    pub body: Vec<Instruction>,
    pub labels: Vec<Label>,
}

impl Function {
    pub fn new(name: &str) -> Self {
        Function {
            name: name.to_string(),
            params: Vec::new(),
            ret: None,
            entry: false,
            address_taken: false,
            body: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn signature(&self) -> Signature {
        Signature { params: self.params.iter().map(|p| p.kind).collect(), ret: self.ret }
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().find(|l| l.name == name).map(|l| l.index)
    }

    /// Successor instruction indices of `idx`; `body.len()` stands for the
    /// implicit return at the end of the body.
    pub fn successors(&self, idx: usize) -> Vec<usize> {
        let instr = &self.body[idx];
        match &instr.op {
            Op::Ret { .. } => vec![],
            Op::Br { .. } | Op::Cbr { .. } => instr
                .op
                .branch_targets()
                .into_iter()
                .filter_map(|l| self.label_index(l))
                .collect(),
            _ => vec![idx + 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub functions: Vec<Function>,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    /// Functions flagged `entry`; a program without markers enters at `main`.
    pub fn entries(&self) -> Vec<String> {
        let marked: Vec<String> =
            self.functions.iter().filter(|f| f.entry).map(|f| f.name.clone()).collect();
        if marked.is_empty() {
            vec!["main".to_string()]
        } else {
            marked
        }
    }

    /// Recompute `address_taken` from `@name` operands anywhere in the program.
    pub fn refresh_address_taken(&mut self) {
        let mut taken = std::collections::BTreeSet::new();
        for f in &self.functions {
            for instr in &f.body {
                for o in instr.op.operands() {
                    if let Operand::Func(name) = o {
                        taken.insert(name);
                    }
                }
            }
        }
        for f in &mut self.functions {
            f.address_taken = taken.contains(&f.name);
        }
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.iter().map(|f| f.body.len()).sum()
    }
}
