use std::collections::HashMap;

use super::{Function, Op, Operand, Program, ValueKind};

/// Kind of every named value in one function. The first definition in
/// linear order fixes the kind; the validator rejects conflicting redefinitions.
pub type KindMap = HashMap<String, ValueKind>;

pub(crate) fn operand_kind(o: &Operand, kinds: &KindMap) -> Option<ValueKind> {
    match o {
        Operand::Int(_) => Some(ValueKind::Scalar),
        Operand::Func(_) => Some(ValueKind::Func),
        Operand::Value(v) => kinds.get(v).copied(),
    }
}

/// Kind produced by `op`, or `None` when the op yields nothing or an
/// operand's kind is not yet known.
pub fn result_kind(op: &Op, kinds: &KindMap, program: &Program) -> Option<ValueKind> {
    match op {
        Op::HeapAlloc { .. }
        | Op::HeapAllocUninit { .. }
        | Op::VecNew { .. }
        | Op::BoxFromRaw { .. }
        | Op::Move { .. } => Some(ValueKind::Owner),
        Op::AsRaw { .. } | Op::RawAlloc { .. } | Op::Null => Some(ValueKind::Raw),
        Op::DerefRead { .. } | Op::Unchecked { .. } => Some(ValueKind::Scalar),
        Op::Gep { ptr, .. } => kinds.get(ptr).copied(),
        Op::Copy { src } => operand_kind(src, kinds),
        Op::LoadField { kind, .. } => Some(*kind),
        Op::Call { callee, .. } => program.function(callee).and_then(|f| f.ret),
        Op::ICall { sig, .. } => sig.ret,
        _ => None,
    }
}

pub fn infer_kinds(program: &Program, func: &Function) -> KindMap {
    let mut kinds: KindMap = func.params.iter().map(|p| (p.name.clone(), p.kind)).collect();
    for instr in &func.body {
        if let Some(name) = &instr.result {
            if kinds.contains_key(name) {
                continue;
            }
            if let Some(k) = result_kind(&instr.op, &kinds, program) {
                kinds.insert(name.clone(), k);
            }
        }
    }
    kinds
}
