use std::collections::{BTreeSet, VecDeque};

use crate::ir::{Op, Program, ValueKind};

use super::facts::Facts;
use super::{PointerRef, RiskError, SourceClass, TaintClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Origin {
    AsRaw,
    Fresh,
    Null,
    Unresolved,
}

impl Origin {
    fn class(self) -> Option<TaintClass> {
        match self {
            Origin::AsRaw => Some(TaintClass::T1),
            Origin::Fresh | Origin::Null => Some(TaintClass::T2),
            Origin::Unresolved => None,
        }
    }
}

/// Walk raw-to-raw derivations backwards from `v` to the definitions that
/// created the raw pointer in the first place.
pub(crate) fn raw_origins(facts: &Facts, v: usize) -> Vec<(usize, Origin)> {
    let is_raw = |n: usize| !facts.is_field(n) && facts.values[n].kind == ValueKind::Raw;
    let mut out = Vec::new();
    let mut field_loads = Vec::new();
    let mut seen = BTreeSet::from([v]);
    let mut queue = VecDeque::from([v]);
    let mut visit = |n: usize, queue: &mut VecDeque<usize>| {
        if seen.insert(n) {
            queue.push_back(n);
        }
    };
    while let Some(u) = queue.pop_front() {
        if facts.is_field(u) {
            for &e in &facts.pred[u] {
                let src = facts.edges[e].src;
                if is_raw(src) {
                    visit(src, &mut queue);
                }
            }
            continue;
        }
        for &def in &facts.values[u].defs {
            let origin = match facts.def_instruction(u, def).map(|i| &i.op) {
                Some(Op::AsRaw { .. }) => Some(Origin::AsRaw),
                Some(Op::RawAlloc { .. }) => Some(Origin::Fresh),
                Some(Op::Null) => Some(Origin::Null),
                _ => None,
            };
            if let Some(o) = origin {
                out.push((u, o));
                continue;
            }
            let preds: Vec<usize> = facts.def_preds(u, def).map(|e| e.src).collect();
            if preds.is_empty() {
                out.push((u, Origin::Unresolved));
            }
            for src in preds {
                if facts.is_field(src) {
                    if facts.pred[src].is_empty() {
                        // A field nothing ever stores into reads as null.
                        out.push((u, Origin::Null));
                    } else {
                        field_loads.push(u);
                        visit(src, &mut queue);
                    }
                } else if is_raw(src) {
                    visit(src, &mut queue);
                }
            }
        }
    }
    // Fields that only ever hold what was loaded from them never get a
    // value from outside, so every load reads null.
    if out.is_empty() {
        out.extend(field_loads.into_iter().map(|u| (u, Origin::Null)));
    }
    out.sort();
    out.dedup();
    out
}

pub(crate) fn exposed_ids(facts: &Facts) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let raw = |fi: usize, name: &str| {
        facts.value_id(fi, name).filter(|&v| facts.values[v].kind == ValueKind::Raw)
    };
    for &fi in &facts.funcs {
        for instr in &facts.func(fi).body {
            if !instr.attrs.unsafe_code {
                continue;
            }
            if let Some(v) = instr.result.as_deref().and_then(|r| raw(fi, r)) {
                out.insert(v);
            }
            for u in instr.op.used_values() {
                if let Some(v) = raw(fi, &u) {
                    out.insert(v);
                    out.extend(raw_origins(facts, v).into_iter().map(|(o, _)| o));
                }
            }
        }
    }
    out
}

/// Raw pointers defined or used in unsafe code, plus the definitions that
/// unsafe uses trace back to.
pub fn find_exposed_raw_pointers(p: &Program, reachable: &BTreeSet<String>) -> BTreeSet<PointerRef> {
    let facts = Facts::build(p, reachable);
    exposed_ids(&facts).into_iter().map(|v| facts.pointer_ref(v)).collect()
}

pub(crate) fn classify_ids(facts: &Facts, exposed: &BTreeSet<usize>) -> Result<Vec<(usize, TaintClass)>, RiskError> {
    let mut out = Vec::new();
    for &v in exposed {
        let classes: BTreeSet<TaintClass> =
            raw_origins(facts, v).into_iter().filter_map(|(_, o)| o.class()).collect();
        match classes.first() {
            Some(&c) => out.push((v, c)),
            None => return Err(RiskError::UnresolvableRoot(facts.pointer_ref(v))),
        }
    }
    Ok(out)
}

/// T1 when any origin is an `as_raw` of an existing pointer, otherwise T2.
pub fn classify_sources(
    p: &Program,
    exposed: &BTreeSet<PointerRef>,
    reachable: &BTreeSet<String>,
) -> Result<SourceClass, RiskError> {
    let facts = Facts::build(p, reachable);
    let mut ids = BTreeSet::new();
    for r in exposed {
        match facts.lookup(r) {
            Some(v) => {
                ids.insert(v);
            }
            None => return Err(RiskError::UnresolvableRoot(r.clone())),
        }
    }
    Ok(classify_ids(&facts, &ids)?.into_iter().map(|(v, c)| (facts.pointer_ref(v), c)).collect())
}
