use std::fmt::Write;

use super::{Function, Instruction, Op, Operand, Program};

fn operand(o: &Operand) -> String {
    match o {
        Operand::Value(v) => format!("%{v}"),
        Operand::Func(f) => format!("@{f}"),
        Operand::Int(n) => n.to_string(),
    }
}

fn list(ops: &[Operand]) -> String {
    ops.iter().map(operand).collect::<Vec<_>>().join(", ")
}

/// One instruction without indentation or newline.
pub fn print_instruction(instr: &Instruction) -> String {
    let mut s = String::new();
    if let Some(r) = &instr.result {
        let _ = write!(s, "%{r} = ");
    }
    s.push_str(instr.op.opcode());
    let rest = match &instr.op {
        Op::HeapAlloc { count } | Op::HeapAllocUninit { count } | Op::RawAlloc { count } => operand(count),
        Op::VecNew { capacity, len } => format!("{}, {}", operand(capacity), operand(len)),
        Op::VecPush { vec } | Op::VecPop { vec } => format!("%{vec}"),
        Op::SetLen { vec, len } => format!("%{vec}, {}", operand(len)),
        Op::Unchecked { lhs, op, rhs } => match rhs {
            Some(r) => format!("{}, {}, {}", operand(lhs), op.keyword(), operand(r)),
            None => format!("{}, {}", operand(lhs), op.keyword()),
        },
        Op::AsRaw { src, count } => match count {
            Some(c) => format!("%{src} count {}", operand(c)),
            None => format!("%{src}"),
        },
        Op::BoxFromRaw { src } | Op::Move { src } => format!("%{src}"),
        Op::Gep { ptr, delta } => format!("%{ptr}, {}", operand(delta)),
        Op::Copy { src } => operand(src),
        Op::StoreField { target, value } => format!("%{}.{}, {}", target.object, target.field, operand(value)),
        Op::LoadField { source, kind } => format!("%{}.{} : {kind}", source.object, source.field),
        Op::Drop { owner } | Op::Forget { owner } | Op::EndScope { owner } => format!("%{owner}"),
        Op::DerefRead { ptr } => format!("%{ptr}"),
        Op::DerefWrite { ptr, value } => format!("%{ptr}, {}", operand(value)),
        Op::Null => String::new(),
        Op::Call { callee, args } => format!("{callee}({})", list(args)),
        Op::ICall { target, args, sig } => format!("%{target}({}) {sig}", list(args)),
        Op::Ret { value } => value.as_ref().map(operand).unwrap_or_default(),
        Op::Br { label } => label.clone(),
        Op::Cbr { cond, then_label, else_label } => format!("{}, {then_label}, {else_label}", operand(cond)),
    };
    if !rest.is_empty() {
        s.push(' ');
        s.push_str(&rest);
    }
    if instr.attrs.unsafe_code {
        s.push_str(" !unsafe");
    }
    if instr.attrs.rawptr {
        s.push_str(" !rawptr");
    }
    s
}

pub(crate) fn header(f: &Function) -> String {
    let params: Vec<String> = f.params.iter().map(|p| format!("%{}: {}", p.name, p.kind)).collect();
    let mut s = format!("fn {}({})", f.name, params.join(", "));
    if let Some(k) = f.ret {
        let _ = write!(s, " -> {k}");
    }
    if f.entry {
        s.push_str(" entry");
    }
    s.push_str(" {");
    s
}

/// Render one function, calling `extra(index)` for lines to emit before
/// instruction `index` (after its labels) and `extra_after(index)` for lines
/// after it. Used by the instrumented printer.
pub(crate) fn function_with(
    f: &Function,
    before: &dyn Fn(Option<usize>) -> Vec<String>,
    after: &dyn Fn(usize) -> Vec<String>,
) -> String {
    let mut out = header(f);
    out.push('\n');
    for line in before(None) {
        let _ = writeln!(out, "  {line}");
    }
    for (i, instr) in f.body.iter().enumerate() {
        for l in f.labels.iter().filter(|l| l.index == i) {
            let _ = writeln!(out, "{}:", l.name);
        }
        for line in before(Some(i)) {
            let _ = writeln!(out, "  {line}");
        }
        let _ = writeln!(out, "  {}", print_instruction(instr));
        for line in after(i) {
            let _ = writeln!(out, "  {line}");
        }
    }
    for l in f.labels.iter().filter(|l| l.index >= f.body.len()) {
        let _ = writeln!(out, "{}:", l.name);
    }
    out.push('}');
    out
}

pub fn print_function(f: &Function) -> String {
    function_with(f, &|_| Vec::new(), &|_| Vec::new())
}

/// Functions separated by a blank line; no trailing newline.
pub fn print_program(p: &Program) -> String {
    p.functions.iter().map(print_function).collect::<Vec<_>>().join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    #[test]
    fn minimal_main() {
        let p = parse_program("fn main() entry { ret }").unwrap();
        assert_eq!(print_program(&p), "fn main() entry {\n  ret\n}");
    }

    #[test]
    fn round_trip_preserves_structure() {
        let src = "fn g(%o: owner, %n: scalar) -> raw {\n  %r = as_raw %o count %n !rawptr\n  ret %r !rawptr\n}\n\
                   fn main() entry {\n  %v = vec_new 10, 4\nLtop:\n  %k = api_unchecked 3, neg !unsafe\n  api_set_len %v, 100 !unsafe\n  %q = call g(%v, 2) !rawptr\n  cbr %k, Ltop, Lout\nLout:\n}";
        let p = parse_program(src).unwrap();
        let printed = print_program(&p);
        let again = parse_program(&printed).unwrap();
        assert_eq!(p, again);
        assert_eq!(printed, print_program(&again));
    }
}
