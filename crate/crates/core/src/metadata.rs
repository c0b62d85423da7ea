//! Spatial templates (capacity, initialized length, offset) for spatially
//! risky pointers, the metadata-carrying pointers on their derivation
//! chains, and owner sets for temporal tracking.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::ir::{Op, Operand, Program};
use crate::risky::facts::Facts;
use crate::risky::{PointerRef, RiskSet, TaintedSets};

/// A capacity or length: a literal, or the name of the value that holds it
/// at run time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Literal(i64),
    Symbol(String),
}

impl Bound {
    pub fn from_operand(o: &Operand) -> Bound {
        match o {
            Operand::Int(n) => Bound::Literal(*n),
            Operand::Value(v) => Bound::Symbol(v.clone()),
            Operand::Func(f) => Bound::Symbol(format!("@{f}")),
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Literal(n) => write!(f, "{n}"),
            Bound::Symbol(s) => write!(f, "%{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Offset {
    Static(i64),
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpatialTemplate {
    pub pointer: PointerRef,
    pub root: PointerRef,
    /// Every root the pointer may derive from; more than one only at joins.
    pub roots: BTreeSet<PointerRef>,
    /// Shortest derivation path root → pointer (field hops are elided).
    pub chain: Vec<PointerRef>,
    /// Every pointer the metadata may flow through on its way here.
    pub support: BTreeSet<PointerRef>,
    pub capacity: Bound,
    pub init_len: Bound,
    pub static_offset: Offset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemporalTemplate {
    pub source: PointerRef,
    pub pointer_set: BTreeSet<PointerRef>,
    pub owner_set: BTreeSet<PointerRef>,
}

/// Per-definition spatial binding, shared with instrumentation.
pub(crate) enum DefBinding {
    Root { capacity: Bound, init_len: Bound },
    View { count: Bound },
    Derived,
}

pub(crate) fn def_binding(op: &Op) -> DefBinding {
    let root = |c: Bound, i: Bound| DefBinding::Root { capacity: c, init_len: i };
    match op {
        Op::HeapAlloc { count } => root(Bound::from_operand(count), Bound::from_operand(count)),
        Op::HeapAllocUninit { count } | Op::RawAlloc { count } => {
            root(Bound::from_operand(count), Bound::Literal(0))
        }
        Op::VecNew { capacity, len } => root(Bound::from_operand(capacity), Bound::from_operand(len)),
        Op::Null => root(Bound::Literal(0), Bound::Literal(0)),
        Op::AsRaw { count: Some(c), .. } => DefBinding::View { count: Bound::from_operand(c) },
        _ => DefBinding::Derived,
    }
}

struct Backtrack {
    roots: Vec<usize>,
    /// BFS parent (towards the pointer) of every visited node.
    parent: BTreeMap<usize, Option<usize>>,
}

fn is_root(facts: &Facts, v: usize) -> bool {
    facts.values[v].defs.iter().any(|&d| match facts.def_instruction(v, d) {
        Some(i) => !matches!(def_binding(&i.op), DefBinding::Derived | DefBinding::View { .. })
            || facts.def_preds(v, d).next().is_none(),
        None => facts.def_preds(v, d).next().is_none(),
    })
}

fn backtrack(facts: &Facts, v: usize) -> Backtrack {
    let mut parent = BTreeMap::from([(v, None)]);
    let mut roots = Vec::new();
    let mut queue = VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        if !facts.is_field(u) && is_root(facts, u) {
            roots.push(u);
        }
        // A field nothing stores into reads as null; the loading value is
        // then its own root.
        if facts.is_field(u) && facts.pred[u].is_empty() {
            if let Some(Some(child)) = parent.get(&u) {
                if !roots.contains(child) {
                    roots.push(*child);
                }
            }
        }
        for &e in &facts.pred[u] {
            let src = facts.edges[e].src;
            if let std::collections::btree_map::Entry::Vacant(slot) = parent.entry(src) {
                slot.insert(Some(u));
                queue.push_back(src);
            }
        }
    }
    // Field flow closed on itself: the loads read null and are the roots.
    if roots.is_empty() {
        for (&u, &child) in &parent {
            if let (true, Some(c)) = (facts.is_field(u), child) {
                if !facts.is_field(c) && !roots.contains(&c) {
                    roots.push(c);
                }
            }
        }
    }
    Backtrack { roots, parent }
}

fn chain_nodes(bt: &Backtrack, root: usize) -> Vec<usize> {
    let mut out = vec![root];
    let mut cur = root;
    while let Some(Some(next)) = bt.parent.get(&cur) {
        out.push(*next);
        cur = *next;
    }
    out
}

/// Root and derivation chain of a pointer, or `None` if it is not a pointer
/// of the reachable program.
pub fn backtrack_root(
    p: &Program,
    reachable: &BTreeSet<String>,
    ptr: &PointerRef,
) -> Option<(PointerRef, Vec<PointerRef>)> {
    let facts = Facts::build(p, reachable);
    let t = template_for(&facts, facts.lookup(ptr)?);
    Some((t.root, t.chain))
}

fn literal_delta(op: &Op) -> Option<Option<i64>> {
    match op {
        Op::Gep { delta: Operand::Int(n), .. } => Some(Some(*n)),
        Op::Gep { .. } => Some(None),
        _ => None,
    }
}

pub(crate) fn template_for(facts: &Facts, v: usize) -> SpatialTemplate {
    let bt = backtrack(facts, v);
    let root = bt.roots.first().copied().unwrap_or(v);
    let nodes = chain_nodes(&bt, root);
    let chain_values: Vec<usize> = nodes.iter().copied().filter(|&n| !facts.is_field(n)).collect();
    let support: BTreeSet<usize> = bt.parent.keys().copied().filter(|&n| !facts.is_field(n)).collect();

    let root_binding = facts.values[root]
        .defs
        .iter()
        .filter_map(|&d| facts.def_instruction(root, d))
        .map(|i| def_binding(&i.op))
        .find(|b| matches!(b, DefBinding::Root { .. }));
    let (mut capacity, init_len) = match root_binding {
        Some(DefBinding::Root { capacity, init_len }) => (capacity, init_len),
        _ => (Bound::Literal(0), Bound::Literal(0)),
    };

    // The last view on the chain narrows the capacity; gep deltas after it
    // make up the static offset.
    let mut offset = Some(0i64);
    for &n in &chain_values {
        for &d in &facts.values[n].defs {
            let Some(instr) = facts.def_instruction(n, d) else { continue };
            if let DefBinding::View { count } = def_binding(&instr.op) {
                capacity = count;
                offset = Some(0);
            }
            if let Some(delta) = literal_delta(&instr.op) {
                offset = match (offset, delta) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
            }
        }
    }
    let simple_path = support.len() == chain_values.len()
        && chain_values.iter().all(|&n| facts.values[n].defs.len() == 1)
        && nodes.iter().all(|&n| facts.pred[n].len() <= 1);
    let static_offset = match offset {
        Some(o) if simple_path => Offset::Static(o),
        _ => Offset::Dynamic,
    };

    let roots: BTreeSet<PointerRef> = if bt.roots.is_empty() {
        BTreeSet::from([facts.pointer_ref(v)])
    } else {
        bt.roots.iter().map(|&r| facts.pointer_ref(r)).collect()
    };
    SpatialTemplate {
        pointer: facts.pointer_ref(v),
        root: facts.pointer_ref(root),
        roots,
        chain: chain_values.iter().map(|&n| facts.pointer_ref(n)).collect(),
        support: support.iter().map(|&n| facts.pointer_ref(n)).collect(),
        capacity,
        init_len,
        static_offset,
    }
}

/// One template per spatially risky pointer.
pub fn infer_spatial(
    p: &Program,
    reachable: &BTreeSet<String>,
    risky: &RiskSet,
) -> BTreeMap<PointerRef, SpatialTemplate> {
    let facts = Facts::build(p, reachable);
    risky
        .spatially_risky
        .iter()
        .filter_map(|r| facts.lookup(r))
        .map(|v| {
            let t = template_for(&facts, v);
            (t.pointer.clone(), t)
        })
        .collect()
}

/// Pointers that only relay metadata towards a risky pointer.
pub fn mark_metadata_carriers(
    templates: &BTreeMap<PointerRef, SpatialTemplate>,
    risky: &RiskSet,
) -> BTreeSet<PointerRef> {
    templates
        .values()
        .flat_map(|t| t.support.iter())
        .filter(|r| !risky.spatially_risky.contains(*r))
        .cloned()
        .collect()
}

pub fn infer_owners(tainted: &TaintedSets) -> BTreeMap<PointerRef, TemporalTemplate> {
    tainted
        .sets
        .iter()
        .map(|(source, set)| {
            (
                source.clone(),
                TemporalTemplate {
                    source: source.clone(),
                    pointer_set: set.members.clone(),
                    owner_set: set.owners.clone(),
                },
            )
        })
        .collect()
}
