//! Call graph and the reachable-function scope every later analysis runs in.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::ir::{Op, Operand, Program, Signature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IcallSite {
    pub function: String,
    pub index: usize,
    pub signature: Signature,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CallGraph {
    pub direct_edges: BTreeMap<String, BTreeSet<String>>,
    pub address_taken: BTreeSet<String>,
    pub icall_sites: Vec<IcallSite>,
    pub signatures: BTreeMap<String, Signature>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReachabilityError {
    #[error("fn {function} instruction {index}: call to undefined function `{callee}`")]
    UnresolvedCallee { function: String, index: usize, callee: String },
}

pub fn build_call_graph(p: &Program) -> Result<CallGraph, ReachabilityError> {
    let mut g = CallGraph::default();
    for f in &p.functions {
        g.signatures.insert(f.name.clone(), f.signature());
        g.direct_edges.entry(f.name.clone()).or_default();
    }
    for f in &p.functions {
        for (index, instr) in f.body.iter().enumerate() {
            match &instr.op {
                Op::Call { callee, .. } => {
                    if !g.signatures.contains_key(callee) {
                        return Err(ReachabilityError::UnresolvedCallee {
                            function: f.name.clone(),
                            index,
                            callee: callee.clone(),
                        });
                    }
                    g.direct_edges.entry(f.name.clone()).or_default().insert(callee.clone());
                }
                Op::ICall { sig, .. } => g.icall_sites.push(IcallSite {
                    function: f.name.clone(),
                    index,
                    signature: sig.clone(),
                }),
                _ => {}
            }
            for o in instr.op.operands() {
                if let Operand::Func(name) = o {
                    if g.signatures.contains_key(&name) {
                        g.address_taken.insert(name);
                    }
                }
            }
        }
    }
    Ok(g)
}

/// Address-taken functions whose signature equals `sig` exactly.
pub fn resolve_indirect_callees(g: &CallGraph, sig: &Signature) -> BTreeSet<String> {
    g.address_taken.iter().filter(|f| g.signatures.get(*f) == Some(sig)).cloned().collect()
}

pub fn compute_reachable(g: &CallGraph, entry: &str) -> BTreeSet<String> {
    compute_reachable_from(g, &[entry.to_string()])
}

/// Least fixed point over direct edges plus signature-matched indirect targets.
pub fn compute_reachable_from(g: &CallGraph, entries: &[String]) -> BTreeSet<String> {
    let mut icalls_by_fn: BTreeMap<&str, Vec<&Signature>> = BTreeMap::new();
    for site in &g.icall_sites {
        icalls_by_fn.entry(site.function.as_str()).or_default().push(&site.signature);
    }
    let mut reached = BTreeSet::new();
    let mut queue: VecDeque<String> =
        entries.iter().filter(|e| g.signatures.contains_key(*e)).cloned().collect();
    while let Some(f) = queue.pop_front() {
        if !reached.insert(f.clone()) {
            continue;
        }
        let mut next: Vec<String> = g.direct_edges.get(&f).into_iter().flatten().cloned().collect();
        for sig in icalls_by_fn.get(f.as_str()).into_iter().flatten() {
            next.extend(resolve_indirect_callees(g, sig));
        }
        queue.extend(next.into_iter().filter(|n| !reached.contains(n)));
    }
    reached
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program;

    fn reach(src: &str) -> BTreeSet<String> {
        let p = parse_program(src).unwrap();
        compute_reachable_from(&build_call_graph(&p).unwrap(), &p.entries())
    }

    #[test]
    fn single_main() {
        let p = parse_program("fn main() entry { ret }").unwrap();
        let g = build_call_graph(&p).unwrap();
        assert!(g.direct_edges["main"].is_empty());
        assert!(g.address_taken.is_empty());
    }

    #[test]
    fn dead_helper_excluded() {
        let r = reach("fn dead() {\n  ret\n}\nfn main() entry {\n  ret\n}");
        assert_eq!(r, BTreeSet::from(["main".to_string()]));
    }

    #[test]
    fn address_taken_needs_matching_icall() {
        let src = "fn h(%x: scalar) -> scalar {\n  ret %x\n}\n\
                   fn k(%x: scalar) {\n  ret\n}\n\
                   fn main() entry {\n  %t = heap_alloc 1\n  store_field %t.cb, @h\n  %g = copy @k\n  %f = load_field %t.cb : func\n  %y = icall %f(3) sig(scalar->scalar)\n  ret\n}";
        let p = parse_program(src).unwrap();
        let g = build_call_graph(&p).unwrap();
        assert_eq!(g.address_taken, BTreeSet::from(["h".to_string(), "k".to_string()]));
        assert_eq!(resolve_indirect_callees(&g, &g.icall_sites[0].signature), BTreeSet::from(["h".to_string()]));
        assert_eq!(reach(src), BTreeSet::from(["h".to_string(), "main".to_string()]));
    }

    #[test]
    fn unresolved_callee_is_an_error() {
        let mut p = parse_program("fn main() entry {\n  ret\n}").unwrap();
        p.functions[0].body.insert(0, crate::ir::Instruction::new(None, Op::Call { callee: "ghost".into(), args: vec![] }));
        assert!(matches!(build_call_graph(&p), Err(ReachabilityError::UnresolvedCallee { index: 0, .. })));
    }
}
