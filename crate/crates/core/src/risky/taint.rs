use std::collections::BTreeSet;

use crate::ir::{Program, ValueKind};

use super::facts::{Edge, Facts};
use super::{SourceClass, TaintClass, TaintedSet, TaintedSets};

struct Source {
    node: usize,
    class: TaintClass,
}

fn backward_allowed(facts: &Facts, source: &Source, e: &Edge) -> bool {
    source.class == TaintClass::T1 && !e.transfer && !facts.invalidated_before(e.src, source.node)
}

/// Algorithm 1. Each source starts with the singleton set; a first sweep
/// applies intra-procedural derivations in order and caches the
/// cross-function and memory ones in the worklist; then a depth-first search
/// from every tainted pointer closes the set. Backward steps are taken only
/// for T1 sources, never across a move, and never onto a pointer that is
/// already dead where the source is defined.
pub(crate) fn propagate_ids(facts: &Facts, sources: &[(usize, TaintClass)]) -> Vec<BTreeSet<usize>> {
    let sources: Vec<Source> = sources.iter().map(|&(node, class)| Source { node, class }).collect();
    let mut sets: Vec<BTreeSet<usize>> = sources.iter().map(|s| BTreeSet::from([s.node])).collect();

    let mut worklist = Vec::new();
    for (k, e) in facts.edges.iter().enumerate() {
        if e.unresolved {
            worklist.push(k);
            continue;
        }
        for (src, set) in sources.iter().zip(sets.iter_mut()) {
            if set.contains(&e.src) {
                set.insert(e.dst);
            } else if set.contains(&e.dst) && backward_allowed(facts, src, e) {
                set.insert(e.src);
            }
        }
    }

    // The search walks the cached worklist together with the local
    // derivations, so pointers tainted late still reach their local uses.
    for (src, set) in sources.iter().zip(sets.iter_mut()) {
        let mut visited = BTreeSet::new();
        let tainted: Vec<usize> = set.iter().copied().collect();
        for t in tainted {
            let mut stack = vec![t];
            while let Some(p) = stack.pop() {
                if !visited.insert(p) {
                    continue;
                }
                for &k in &facts.succ[p] {
                    let e = &facts.edges[k];
                    set.insert(e.dst);
                    stack.push(e.dst);
                }
                for &k in &facts.pred[p] {
                    let e = &facts.edges[k];
                    if backward_allowed(facts, src, e) {
                        set.insert(e.src);
                        stack.push(e.src);
                    }
                }
            }
        }
    }
    debug_assert!(worklist.iter().all(|&k| facts.edges[k].unresolved));

    // A source derived from another source shares its pointer set.
    let n = sources.len();
    let mut group: Vec<usize> = (0..n).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if group[i] != group[j] && sets[i].contains(&sources[j].node) {
                    let (keep, drop) = (group[i].min(group[j]), group[i].max(group[j]));
                    for g in group.iter_mut() {
                        if *g == drop {
                            *g = keep;
                        }
                    }
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| group[j] == group[i])
                .flat_map(|j| sets[j].iter().copied())
                .filter(|&v| !facts.is_field(v))
                .collect()
        })
        .collect()
}

pub(crate) fn tainted_sets(facts: &Facts, sources: &[(usize, TaintClass)]) -> TaintedSets {
    let sets = propagate_ids(facts, sources);
    let mut out = TaintedSets::default();
    for (&(node, _), members) in sources.iter().zip(sets) {
        let set = TaintedSet {
            owners: members
                .iter()
                .filter(|&&v| facts.values[v].kind == ValueKind::Owner)
                .map(|&v| facts.pointer_ref(v))
                .collect(),
            members: members.iter().map(|&v| facts.pointer_ref(v)).collect(),
        };
        out.sets.insert(facts.pointer_ref(node), set);
    }
    out
}

pub fn propagate_taint(p: &Program, sources: &SourceClass, reachable: &BTreeSet<String>) -> TaintedSets {
    let facts = Facts::build(p, reachable);
    let ids: Vec<(usize, TaintClass)> =
        sources.iter().filter_map(|(r, &c)| facts.lookup(r).map(|v| (v, c))).collect();
    tainted_sets(&facts, &ids)
}
