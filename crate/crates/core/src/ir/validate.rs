use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::Serialize;

use super::kinds::{infer_kinds, operand_kind, result_kind};
use super::{Function, Instruction, KindMap, Op, Operand, Program, ValueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateFunction,
    DuplicateParameter,
    DuplicateLabel,
    UnknownLabel,
    UnknownFunction,
    RawptrMismatch,
    UnsafeRequired,
    UseBeforeDefinition,
    KindMismatch,
    ArityMismatch,
    ReturnMismatch,
    UnexpectedResult,
    MissingEntry,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::DuplicateFunction => "duplicate function",
            Rule::DuplicateParameter => "duplicate parameter",
            Rule::DuplicateLabel => "duplicate label",
            Rule::UnknownLabel => "unknown label",
            Rule::UnknownFunction => "unknown function",
            Rule::RawptrMismatch => "rawptr attr mismatch",
            Rule::UnsafeRequired => "unsafe attr required",
            Rule::UseBeforeDefinition => "use before definition",
            Rule::KindMismatch => "kind mismatch",
            Rule::ArityMismatch => "arity mismatch",
            Rule::ReturnMismatch => "return kind mismatch",
            Rule::UnexpectedResult => "unexpected result",
            Rule::MissingEntry => "missing entry",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub function: String,
    /// Instruction index within the function; `None` for header-level rules.
    pub index: Option<usize>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "fn {} instruction {}: {}: {}", self.function, i, self.rule, self.message),
            None => write!(f, "fn {}: {}: {}", self.function, self.rule, self.message),
        }
    }
}

/// Whether `instr` must carry `!rawptr`, or `None` when some kind involved
/// cannot be resolved.
pub fn rawptr_required(instr: &Instruction, kinds: &KindMap, program: &Program) -> Option<bool> {
    let mut any = false;
    for o in instr.op.operands() {
        any |= operand_kind(&o, kinds)? == ValueKind::Raw;
    }
    if instr.result.is_some() {
        match result_kind(&instr.op, kinds, program) {
            Some(k) => any |= k == ValueKind::Raw,
            None if produces_value(&instr.op) => return None,
            None => {}
        }
    }
    Some(any)
}

fn produces_value(op: &Op) -> bool {
    !matches!(
        op,
        Op::VecPush { .. }
            | Op::VecPop { .. }
            | Op::SetLen { .. }
            | Op::StoreField { .. }
            | Op::Drop { .. }
            | Op::Forget { .. }
            | Op::EndScope { .. }
            | Op::DerefWrite { .. }
            | Op::Ret { .. }
            | Op::Br { .. }
            | Op::Cbr { .. }
    )
}

const PTR: &[ValueKind] = &[ValueKind::Owner, ValueKind::Raw];
const OWNER: &[ValueKind] = &[ValueKind::Owner];
const RAW: &[ValueKind] = &[ValueKind::Raw];
const SCALAR: &[ValueKind] = &[ValueKind::Scalar];
const FUNC: &[ValueKind] = &[ValueKind::Func];

/// Operands with the kinds they may take. Call arguments are checked
/// separately against the callee signature.
fn operand_expectations(op: &Op) -> Vec<(Operand, &'static [ValueKind])> {
    let v = |s: &String| Operand::Value(s.clone());
    match op {
        Op::HeapAlloc { count } | Op::HeapAllocUninit { count } | Op::RawAlloc { count } => {
            vec![(count.clone(), SCALAR)]
        }
        Op::VecNew { capacity, len } => vec![(capacity.clone(), SCALAR), (len.clone(), SCALAR)],
        Op::VecPush { vec } | Op::VecPop { vec } => vec![(v(vec), OWNER)],
        Op::SetLen { vec, len } => vec![(v(vec), OWNER), (len.clone(), SCALAR)],
        Op::Unchecked { lhs, rhs, .. } => {
            let mut out = vec![(lhs.clone(), SCALAR)];
            out.extend(rhs.iter().map(|r| (r.clone(), SCALAR)));
            out
        }
        Op::AsRaw { src, count } => {
            let mut out = vec![(v(src), PTR)];
            out.extend(count.iter().map(|c| (c.clone(), SCALAR)));
            out
        }
        Op::BoxFromRaw { src } => vec![(v(src), RAW)],
        Op::Gep { ptr, delta } => vec![(v(ptr), PTR), (delta.clone(), SCALAR)],
        Op::StoreField { target, .. } => vec![(v(&target.object), OWNER)],
        Op::LoadField { source, .. } => vec![(v(&source.object), OWNER)],
        Op::Move { src } => vec![(v(src), OWNER)],
        Op::Drop { owner } | Op::Forget { owner } | Op::EndScope { owner } => vec![(v(owner), OWNER)],
        Op::DerefRead { ptr } => vec![(v(ptr), PTR)],
        Op::DerefWrite { ptr, value } => vec![(v(ptr), PTR), (value.clone(), SCALAR)],
        Op::ICall { target, .. } => vec![(v(target), FUNC)],
        Op::Cbr { cond, .. } => vec![(cond.clone(), SCALAR)],
        Op::Copy { .. } | Op::Null | Op::Call { .. } | Op::Ret { .. } | Op::Br { .. } => vec![],
    }
}

/// Check every structural rule; an empty list means the program is valid.
pub fn validate_program(p: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut names = HashSet::new();
    for f in &p.functions {
        if !names.insert(f.name.as_str()) {
            out.push(Diagnostic {
                function: f.name.clone(),
                index: None,
                rule: Rule::DuplicateFunction,
                message: format!("function `{}` defined more than once", f.name),
            });
        }
    }
    for e in p.entries() {
        if p.function(&e).is_none() {
            out.push(Diagnostic {
                function: e.clone(),
                index: None,
                rule: Rule::MissingEntry,
                message: format!("entry function `{e}` is not defined"),
            });
        }
    }
    for f in &p.functions {
        validate_function(p, f, &mut out);
    }
    out
}

fn validate_function(p: &Program, f: &Function, out: &mut Vec<Diagnostic>) {
    let mut diag = |index: Option<usize>, rule: Rule, message: String| {
        out.push(Diagnostic { function: f.name.clone(), index, rule, message });
    };
    let mut seen = HashSet::new();
    for param in &f.params {
        if !seen.insert(param.name.as_str()) {
            diag(None, Rule::DuplicateParameter, format!("parameter `%{}` repeated", param.name));
        }
    }
    let mut labels = HashSet::new();
    for l in &f.labels {
        if !labels.insert(l.name.as_str()) {
            diag(None, Rule::DuplicateLabel, format!("label `{}` defined more than once", l.name));
        }
    }

    let kinds = infer_kinds(p, f);
    let mut defined: BTreeSet<&str> = f.params.iter().map(|p| p.name.as_str()).collect();
    for (i, instr) in f.body.iter().enumerate() {
        let at = Some(i);
        for v in instr.op.used_values() {
            if !defined.contains(v.as_str()) {
                diag(at, Rule::UseBeforeDefinition, format!("`%{v}` used before any definition"));
            }
        }
        for o in instr.op.operands() {
            if let Operand::Func(name) = &o {
                if p.function(name).is_none() {
                    diag(at, Rule::UnknownFunction, format!("`@{name}` names no function"));
                }
            }
        }
        for (o, allowed) in operand_expectations(&instr.op) {
            if let Some(k) = operand_kind(&o, &kinds) {
                if !allowed.contains(&k) {
                    diag(at, Rule::KindMismatch, format!("{} operand has kind {k}", instr.op.opcode()));
                }
            }
        }
        for l in instr.op.branch_targets() {
            if !labels.contains(l) {
                diag(at, Rule::UnknownLabel, format!("branch to undefined label `{l}`"));
            }
        }
        let needs_unsafe = matches!(instr.op, Op::SetLen { .. } | Op::Unchecked { .. } | Op::BoxFromRaw { .. });
        if needs_unsafe && !instr.attrs.unsafe_code {
            diag(at, Rule::UnsafeRequired, format!("{} must carry `!unsafe`", instr.op.opcode()));
        }
        if let Some(required) = rawptr_required(instr, &kinds, p) {
            if required != instr.attrs.rawptr {
                diag(at, Rule::RawptrMismatch, format!("`!rawptr` should be {}", if required { "present" } else { "absent" }));
            }
        }
        match &instr.op {
            Op::Call { callee, args } => match p.function(callee) {
                None => diag(at, Rule::UnknownFunction, format!("call to undefined function `{callee}`")),
                Some(g) => {
                    check_args(&g.signature().params, args, &kinds, &mut |m| diag(at, Rule::ArityMismatch, m));
                }
            },
            Op::ICall { args, sig, .. } => {
                check_args(&sig.params, args, &kinds, &mut |m| diag(at, Rule::ArityMismatch, m));
            }
            Op::Ret { value } => match (value, f.ret) {
                (None, None) => {}
                (Some(o), Some(want)) => {
                    if let Some(k) = operand_kind(o, &kinds) {
                        if k != want {
                            diag(at, Rule::ReturnMismatch, format!("returns {k}, function declares {want}"));
                        }
                    }
                }
                (Some(_), None) => diag(at, Rule::ReturnMismatch, "value returned from a function without return kind".into()),
                (None, Some(want)) => diag(at, Rule::ReturnMismatch, format!("missing return value of kind {want}")),
            },
            _ => {}
        }
        if let Some(r) = &instr.result {
            let produced = result_kind(&instr.op, &kinds, p);
            let call_without_ret = match &instr.op {
                Op::Call { callee, .. } => p.function(callee).is_some_and(|g| g.ret.is_none()),
                Op::ICall { sig, .. } => sig.ret.is_none(),
                _ => false,
            };
            if !produces_value(&instr.op) || call_without_ret {
                diag(at, Rule::UnexpectedResult, format!("{} yields no value for `%{r}`", instr.op.opcode()));
            } else if let (Some(k), Some(first)) = (produced, kinds.get(r)) {
                if k != *first {
                    diag(at, Rule::KindMismatch, format!("`%{r}` redefined as {k}, first defined as {first}"));
                }
            }
            defined.insert(r.as_str());
        }
    }
}

fn check_args(want: &[ValueKind], args: &[Operand], kinds: &KindMap, report: &mut dyn FnMut(String)) {
    if want.len() != args.len() {
        report(format!("expected {} arguments, found {}", want.len(), args.len()));
        return;
    }
    for (i, (w, a)) in want.iter().zip(args).enumerate() {
        if let Some(k) = operand_kind(a, kinds) {
            if k != *w {
                report(format!("argument {i} has kind {k}, expected {w}"));
            }
        }
    }
}
