//! Independent oracles for the integration tests. Nothing here reuses the
//! analysis internals: values, derivations, object classes and validity are
//! recomputed from the IR with plain fixed-point loops.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use litersan::ir::{infer_kinds, Op, Operand, Program, Signature, ValueKind};
use litersan::risky::{PointerRef, TaintClass};

pub mod criteria;
pub mod matrix;

/// Breadth-first search over direct calls and every address-taken function
/// whose signature matches an icall in a visited function.
pub fn bfs_reachable(p: &Program) -> BTreeSet<String> {
    let taken: BTreeSet<String> = p
        .functions
        .iter()
        .flat_map(|f| &f.body)
        .flat_map(|i| i.op.operands())
        .filter_map(|o| match o {
            Operand::Func(n) if p.function(&n).is_some() => Some(n),
            _ => None,
        })
        .collect();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut frontier: Vec<String> = p.entries().into_iter().filter(|e| p.function(e).is_some()).collect();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for name in frontier {
            if !seen.insert(name.clone()) {
                continue;
            }
            let f = p.function(&name).unwrap();
            for instr in &f.body {
                match &instr.op {
                    Op::Call { callee, .. } => next.push(callee.clone()),
                    Op::ICall { sig, .. } => {
                        for g in &p.functions {
                            if taken.contains(&g.name) && &g.signature() == sig {
                                next.push(g.name.clone());
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        frontier = next;
    }
    seen
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Node {
    Value(usize),
    Field(usize),
}

struct Val {
    func: usize,
    name: String,
    kind: ValueKind,
    /// `None` stands for a parameter.
    defs: Vec<Option<usize>>,
}

struct Deriv {
    src: Node,
    dst: Node,
    is_move: bool,
}

struct Model<'p> {
    p: &'p Program,
    reachable: BTreeSet<String>,
    vals: Vec<Val>,
    derivs: Vec<Deriv>,
    /// Per value: validity before each instruction of its function.
    valid: Vec<Vec<bool>>,
    /// (caller, index) → callee function indices.
    calls: BTreeMap<(usize, usize), Vec<usize>>,
}

impl<'p> Model<'p> {
    fn find(&self, func: usize, name: &str) -> Option<usize> {
        self.vals.iter().position(|v| v.func == func && v.name == name)
    }

    fn build(p: &'p Program, reachable: &BTreeSet<String>) -> Self {
        let mut m = Model {
            p,
            reachable: reachable.clone(),
            vals: Vec::new(),
            derivs: Vec::new(),
            valid: Vec::new(),
            calls: BTreeMap::new(),
        };
        let funcs: Vec<usize> =
            (0..p.functions.len()).filter(|&i| reachable.contains(&p.functions[i].name)).collect();

        for &fi in &funcs {
            let f = &p.functions[fi];
            let kinds = infer_kinds(p, f);
            let note = |name: &str, def: Option<usize>, vals: &mut Vec<Val>| {
                let Some(&kind) = kinds.get(name) else { return };
                if !kind.is_pointer() {
                    return;
                }
                match vals.iter_mut().find(|v| v.func == fi && v.name == name) {
                    Some(v) => v.defs.push(def),
                    None => vals.push(Val { func: fi, name: name.to_string(), kind, defs: vec![def] }),
                }
            };
            for prm in &f.params {
                note(&prm.name, None, &mut m.vals);
            }
            for (i, instr) in f.body.iter().enumerate() {
                if let Some(r) = &instr.result {
                    note(r, Some(i), &mut m.vals);
                }
            }
        }

        let taken: BTreeSet<&str> = p
            .functions
            .iter()
            .flat_map(|f| &f.body)
            .flat_map(|i| i.op.operands())
            .filter_map(|o| match o {
                Operand::Func(n) => p.function_index(&n).map(|k| p.functions[k].name.as_str()),
                _ => None,
            })
            .collect();
        let matching = |sig: &Signature| -> Vec<usize> {
            (0..p.functions.len())
                .filter(|&g| {
                    let f = &p.functions[g];
                    taken.contains(f.name.as_str()) && &f.signature() == sig && reachable.contains(&f.name)
                })
                .collect()
        };

        // Value derivations: single-source ops, arguments, returns.
        let mut value_derivs = Vec::new();
        for &fi in &funcs {
            let f = &p.functions[fi];
            for (i, instr) in f.body.iter().enumerate() {
                let dst = instr.result.as_deref().and_then(|r| m.find(fi, r));
                let src = match &instr.op {
                    Op::Copy { src: Operand::Value(s) } => Some(s.as_str()),
                    Op::Gep { ptr, .. } => Some(ptr.as_str()),
                    Op::AsRaw { src, .. } | Op::BoxFromRaw { src } | Op::Move { src } => Some(src.as_str()),
                    _ => None,
                };
                if let (Some(s), Some(d)) = (src.and_then(|s| m.find(fi, s)), dst) {
                    value_derivs.push(Deriv {
                        src: Node::Value(s),
                        dst: Node::Value(d),
                        is_move: matches!(instr.op, Op::Move { .. }),
                    });
                }
                let (targets, args) = match &instr.op {
                    Op::Call { callee, args } => (p.function_index(callee).into_iter().collect(), args),
                    Op::ICall { sig, args, .. } => (matching(sig), args),
                    _ => continue,
                };
                m.calls.insert((fi, i), targets.clone());
                for g in targets {
                    let callee = &p.functions[g];
                    for (a, prm) in args.iter().zip(&callee.params) {
                        let s = a.value().and_then(|a| m.find(fi, a));
                        if let (Some(s), Some(d)) = (s, m.find(g, &prm.name)) {
                            value_derivs.push(Deriv { src: Node::Value(s), dst: Node::Value(d), is_move: false });
                        }
                    }
                    if let Some(d) = dst {
                        for r in &callee.body {
                            if let Op::Ret { value: Some(Operand::Value(v)) } = &r.op {
                                if let Some(s) = m.find(g, v) {
                                    value_derivs.push(Deriv {
                                        src: Node::Value(s),
                                        dst: Node::Value(d),
                                        is_move: false,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }

        // Object classes: connected components over value derivations, then
        // merge everything flowing through the same field of a class.
        let n = m.vals.len();
        let mut class: Vec<usize> = (0..n).collect();
        let mut links: Vec<(usize, usize)> = value_derivs
            .iter()
            .map(|d| match (d.src, d.dst) {
                (Node::Value(a), Node::Value(b)) => (a, b),
                _ => unreachable!(),
            })
            .collect();
        // (object, field, pointer, is_store)
        let mut accesses = Vec::new();
        for &fi in &funcs {
            for instr in &p.functions[fi].body {
                match &instr.op {
                    Op::StoreField { target, value } => {
                        let o = m.find(fi, &target.object);
                        let v = value.value().and_then(|v| m.find(fi, v));
                        if let (Some(o), Some(v)) = (o, v) {
                            accesses.push((o, target.field.clone(), v, true));
                        }
                    }
                    Op::LoadField { source, .. } => {
                        let o = m.find(fi, &source.object);
                        let d = instr.result.as_deref().and_then(|r| m.find(fi, r));
                        if let (Some(o), Some(d)) = (o, d) {
                            accesses.push((o, source.field.clone(), d, false));
                        }
                    }
                    _ => {}
                }
            }
        }
        loop {
            // Label propagation to the smallest index in each component.
            loop {
                let mut changed = false;
                for &(a, b) in &links {
                    let lo = class[a].min(class[b]);
                    if class[a] != lo || class[b] != lo {
                        class[a] = lo;
                        class[b] = lo;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            let mut first: BTreeMap<(usize, &str), usize> = BTreeMap::new();
            let mut added = false;
            for (o, field, v, _) in &accesses {
                let key = (class[*o], field.as_str());
                match first.get(&key) {
                    Some(&w) if class[w] != class[*v] => {
                        links.push((w, *v));
                        added = true;
                    }
                    Some(_) => {}
                    None => {
                        first.insert(key, *v);
                    }
                }
            }
            if !added {
                break;
            }
        }
        let mut field_keys: Vec<(usize, String)> = Vec::new();
        let mut derivs = value_derivs;
        for (o, field, v, is_store) in accesses {
            let key = (class[o], field);
            let k = match field_keys.iter().position(|x| *x == key) {
                Some(k) => k,
                None => {
                    field_keys.push(key);
                    field_keys.len() - 1
                }
            };
            let (src, dst) =
                if is_store { (Node::Value(v), Node::Field(k)) } else { (Node::Field(k), Node::Value(v)) };
            derivs.push(Deriv { src, dst, is_move: false });
        }
        m.derivs = derivs;

        // May-validity: defined on some path and not since released or
        // moved out. Iterated to a fixed point over all instructions.
        m.valid = vec![Vec::new(); m.vals.len()];
        for &fi in &funcs {
            let f = &p.functions[fi];
            let locals: Vec<usize> = (0..m.vals.len()).filter(|&v| m.vals[v].func == fi).collect();
            let len = f.body.len();
            let mut before = vec![vec![false; locals.len()]; len + 1];
            let mut reached = vec![false; len + 1];
            reached[0] = true;
            for (k, &v) in locals.iter().enumerate() {
                before[0][k] = m.vals[v].defs.contains(&None);
            }
            loop {
                let mut changed = false;
                for i in 0..len {
                    if !reached[i] {
                        continue;
                    }
                    let instr = &f.body[i];
                    let mut out = before[i].clone();
                    let killed = match &instr.op {
                        Op::Drop { owner } | Op::Forget { owner } | Op::EndScope { owner } => Some(owner),
                        Op::Move { src } => Some(src),
                        _ => None,
                    };
                    for (k, &v) in locals.iter().enumerate() {
                        if killed == Some(&m.vals[v].name) {
                            out[k] = false;
                        }
                        if instr.result.as_deref() == Some(m.vals[v].name.as_str()) {
                            out[k] = true;
                        }
                    }
                    for s in f.successors(i) {
                        if !reached[s] {
                            reached[s] = true;
                            changed = true;
                        }
                        for k in 0..locals.len() {
                            if out[k] && !before[s][k] {
                                before[s][k] = true;
                                changed = true;
                            }
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            for (k, &v) in locals.iter().enumerate() {
                m.valid[v] = before.iter().map(|row| row[k]).collect();
            }
        }
        m
    }

    fn dead_before_source(&self, node: Node, source: usize) -> bool {
        let Node::Value(v) = node else { return false };
        let (nf, sf) = (self.vals[v].func, self.vals[source].func);
        let points: Vec<usize> = match self.vals[source].defs[0] {
            Some(d) if nf == sf => vec![d],
            _ => self
                .calls
                .iter()
                .filter(|((f, _), targets)| *f == nf && targets.contains(&sf))
                .map(|((_, i), _)| *i)
                .collect(),
        };
        !points.is_empty() && points.iter().all(|&i| !self.valid[v].get(i).copied().unwrap_or(false))
    }

    fn pref(&self, v: usize) -> PointerRef {
        let val = &self.vals[v];
        PointerRef::new(&self.p.functions[val.func].name, &val.name, val.defs[0])
    }
}

/// Tainted pointer set per source: forward along every derivation, backward
/// only for T1 sources, never across a move, never onto a pointer already
/// dead where the source is defined. Sources found in each other's sets
/// share one set. Field nodes are dropped from the result.
pub fn oracle_taint_closure(
    p: &Program,
    reachable: &BTreeSet<String>,
    sources: &BTreeMap<PointerRef, TaintClass>,
) -> BTreeMap<PointerRef, BTreeSet<PointerRef>> {
    let m = Model::build(p, reachable);
    let srcs: Vec<(usize, TaintClass)> = sources
        .iter()
        .filter_map(|(r, &c)| {
            let fi = p.function_index(&r.function)?;
            m.find(fi, &r.value).map(|v| (v, c))
        })
        .collect();
    let mut sets: Vec<BTreeSet<Node>> = Vec::new();
    for &(s, class) in &srcs {
        let mut set = BTreeSet::from([Node::Value(s)]);
        loop {
            let before = set.len();
            for d in &m.derivs {
                if set.contains(&d.src) {
                    set.insert(d.dst);
                }
                if set.contains(&d.dst)
                    && class == TaintClass::T1
                    && !d.is_move
                    && !m.dead_before_source(d.src, s)
                {
                    set.insert(d.src);
                }
            }
            if set.len() == before {
                break;
            }
        }
        sets.push(set);
    }
    let k = srcs.len();
    let mut joined = vec![vec![false; k]; k];
    for i in 0..k {
        for j in 0..k {
            joined[i][j] = i == j || sets[i].contains(&Node::Value(srcs[j].0)) || sets[j].contains(&Node::Value(srcs[i].0));
        }
    }
    // Transitive closure of the sharing relation.
    for via in 0..k {
        for i in 0..k {
            for j in 0..k {
                if joined[i][via] && joined[via][j] {
                    joined[i][j] = true;
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    for i in 0..k {
        let members: BTreeSet<PointerRef> = (0..k)
            .filter(|&j| joined[i][j])
            .flat_map(|j| sets[j].iter())
            .filter_map(|n| match n {
                Node::Value(v) => Some(m.pref(*v)),
                Node::Field(_) => None,
            })
            .collect();
        out.insert(m.pref(srcs[i].0), members);
    }
    out
}

/// Owner-kind members of a set.
pub fn owners_of(p: &Program, members: &BTreeSet<PointerRef>) -> BTreeSet<PointerRef> {
    members
        .iter()
        .filter(|r| {
            p.function(&r.function)
                .map(|f| infer_kinds(p, f).get(&r.value) == Some(&ValueKind::Owner))
                .unwrap_or(false)
        })
        .cloned()
        .collect()
}

/// Signatures used by [`call_graph_source`]: parameter list, return suffix,
/// icall annotation.
const SIGS: [(&str, &str, &str); 3] =
    [("", "", "sig()"), ("%a: raw", " -> raw", "sig(raw->raw)"), ("%a: scalar", " -> scalar", "sig(scalar->scalar)")];

/// Call text for a callee with signature `s`, preceded by any setup line.
fn call_text(k: usize, s: usize, call: &str) -> String {
    let (params, ret, _) = SIGS[s];
    let mut out = String::new();
    let args = match s {
        0 => String::new(),
        1 => {
            out.push_str(&format!("  %n{k} = null !rawptr\n"));
            format!("%n{k}")
        }
        _ => "1".to_string(),
    };
    let res = if ret.is_empty() { String::new() } else { format!("%c{k} = ") };
    let raw = if params.contains("raw") { " !rawptr" } else { "" };
    out.push_str(&format!("  {res}{}{raw}\n", call.replace("ARGS", &args)));
    out
}

/// Source text of a random call graph over `sigs.len()` functions. `calls`,
/// `taken` and `icalls` hold (function, target) pairs: direct calls,
/// address-taking copies, and icalls with the target's signature index.
pub fn call_graph_source(
    sigs: &[usize],
    calls: &[(usize, usize)],
    taken: &[(usize, usize)],
    icalls: &[(usize, usize)],
) -> String {
    let n = sigs.len();
    let sig = |f: usize| sigs[f] % SIGS.len();
    let mut out = String::new();
    for f in 0..n {
        let (params, ret, _) = SIGS[sig(f)];
        let entry = if f == 0 { " entry" } else { "" };
        out.push_str(&format!("fn f{f}({params}){ret}{entry} {{\n"));
        let mut k = 0;
        for &(_, b) in calls.iter().filter(|(a, _)| *a == f) {
            out.push_str(&call_text(k, sig(b % n), &format!("call f{}(ARGS)", b % n)));
            k += 1;
        }
        for &(_, t) in taken.iter().filter(|(a, _)| *a == f) {
            out.push_str(&format!("  %t{k} = copy @f{}\n", t % n));
            k += 1;
        }
        for &(_, s) in icalls.iter().filter(|(a, _)| *a == f) {
            let s = s % SIGS.len();
            out.push_str(&format!("  %g{k} = copy @f{f}\n"));
            out.push_str(&call_text(k, s, &format!("icall %g{k}(ARGS) {}", SIGS[s].2)));
            k += 1;
        }
        out.push_str(match sig(f) {
            0 => "  ret\n",
            1 => "  ret %a !rawptr\n",
            _ => "  ret %a\n",
        });
        out.push_str("}\n\n");
    }
    out
}
