//! Pointer values of the reachable program and the derivation relation
//! between them (copy, gep, as_raw, box_from_raw, move, field store/load,
//! argument/parameter and return/result transfer).

use std::collections::{BTreeSet, HashMap};

use crate::ir::{infer_kinds, Function, KindMap, Op, Operand, Program, ValueKind};
use crate::reachability::{build_call_graph, resolve_indirect_callees, CallGraph};

use super::PointerRef;

/// Where a value gets defined: at function entry (parameters) or by an
/// instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) enum DefSite {
    Entry,
    At(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct ValueInfo {
    pub func: usize,
    pub name: String,
    pub kind: ValueKind,
    pub defs: Vec<DefSite>,
}

#[derive(Debug, Clone)]
pub(crate) struct Edge {
    pub src: usize,
    pub dst: usize,
    /// `move`: the source's ownership ends here.
    pub transfer: bool,
    /// Function and instruction carrying the derivation (the call site for
    /// argument and return transfers).
    pub func: usize,
    pub index: usize,
    /// Which definition of `dst` this edge feeds; `None` for field nodes.
    pub dst_def: Option<DefSite>,
    /// Crosses a function boundary or goes through memory; these are the
    /// derivations Algorithm 1 caches in its worklist.
    pub unresolved: bool,
}

pub(crate) struct Facts<'p> {
    pub program: &'p Program,
    pub graph: CallGraph,
    pub reachable: BTreeSet<String>,
    /// Reachable function indices in program order.
    pub funcs: Vec<usize>,
    pub kinds: Vec<KindMap>,
    pub values: Vec<ValueInfo>,
    pub value_ids: HashMap<(usize, String), usize>,
    /// Field nodes, keyed by object class representative and field name.
    pub fields: Vec<(usize, String)>,
    pub edges: Vec<Edge>,
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
    /// Resolved callees of every reachable call and icall site.
    pub callees: HashMap<(usize, usize), Vec<usize>>,
    valid_before: HashMap<usize, Vec<Vec<bool>>>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.0[hi] = lo;
        true
    }
}

impl<'p> Facts<'p> {
    /// Panics if a direct callee is unresolved; callers validate first.
    pub fn build(program: &'p Program, reachable: &BTreeSet<String>) -> Self {
        let graph = build_call_graph(program).expect("program has unresolved callees");
        let funcs: Vec<usize> = program
            .functions
            .iter()
            .enumerate()
            .filter(|(_, f)| reachable.contains(&f.name))
            .map(|(i, _)| i)
            .collect();
        let kinds: Vec<KindMap> = program.functions.iter().map(|f| infer_kinds(program, f)).collect();

        let mut facts = Facts {
            program,
            graph,
            reachable: reachable.clone(),
            funcs,
            kinds,
            values: Vec::new(),
            value_ids: HashMap::new(),
            fields: Vec::new(),
            edges: Vec::new(),
            succ: Vec::new(),
            pred: Vec::new(),
            callees: HashMap::new(),
            valid_before: HashMap::new(),
        };
        facts.collect_values();
        facts.resolve_calls();
        facts.collect_edges();
        facts.compute_validity();
        facts
    }

    pub fn func(&self, fi: usize) -> &'p Function {
        &self.program.functions[fi]
    }

    pub fn node_count(&self) -> usize {
        self.values.len() + self.fields.len()
    }

    pub fn is_field(&self, node: usize) -> bool {
        node >= self.values.len()
    }

    pub fn value_id(&self, func: usize, name: &str) -> Option<usize> {
        self.value_ids.get(&(func, name.to_string())).copied()
    }

    pub fn lookup(&self, r: &PointerRef) -> Option<usize> {
        let fi = self.program.function_index(&r.function)?;
        self.value_id(fi, &r.value)
    }

    pub fn pointer_ref(&self, v: usize) -> PointerRef {
        let info = &self.values[v];
        let def_site = match info.defs.first() {
            Some(DefSite::At(i)) => Some(*i),
            _ => None,
        };
        PointerRef { function: self.func(info.func).name.clone(), value: info.name.clone(), def_site }
    }

    fn collect_values(&mut self) {
        for &fi in &self.funcs {
            let f = &self.program.functions[fi];
            let kinds = &self.kinds[fi];
            let mut add = |name: &str, site: DefSite, values: &mut Vec<ValueInfo>| {
                let Some(&kind) = kinds.get(name) else { return };
                if !kind.is_pointer() {
                    return;
                }
                let id = *self.value_ids.entry((fi, name.to_string())).or_insert_with(|| {
                    values.push(ValueInfo { func: fi, name: name.to_string(), kind, defs: Vec::new() });
                    values.len() - 1
                });
                values[id].defs.push(site);
            };
            for p in &f.params {
                add(&p.name, DefSite::Entry, &mut self.values);
            }
            for (i, instr) in f.body.iter().enumerate() {
                if let Some(r) = &instr.result {
                    add(r, DefSite::At(i), &mut self.values);
                }
            }
        }
    }

    fn resolve_calls(&mut self) {
        for &fi in &self.funcs {
            for (i, instr) in self.program.functions[fi].body.iter().enumerate() {
                let targets: Vec<usize> = match &instr.op {
                    Op::Call { callee, .. } => self.program.function_index(callee).into_iter().collect(),
                    Op::ICall { sig, .. } => resolve_indirect_callees(&self.graph, sig)
                        .iter()
                        .filter(|n| self.reachable.contains(*n))
                        .filter_map(|n| self.program.function_index(n))
                        .collect(),
                    _ => continue,
                };
                self.callees.insert((fi, i), targets);
            }
        }
    }

    fn pointer_operand(&self, fi: usize, o: &Operand) -> Option<usize> {
        self.value_id(fi, o.value()?)
    }

    /// Value-to-value derivations, in program order. Field transfers are
    /// added afterwards once object classes are known.
    fn value_edges(&self) -> Vec<Edge> {
        let mut out = Vec::new();
        for &fi in &self.funcs {
            let f = &self.program.functions[fi];
            for (i, instr) in f.body.iter().enumerate() {
                let here = |src: usize, dst: usize, transfer: bool| Edge {
                    src,
                    dst,
                    transfer,
                    func: fi,
                    index: i,
                    dst_def: Some(DefSite::At(i)),
                    unresolved: false,
                };
                let dst = instr.result.as_deref().and_then(|r| self.value_id(fi, r));
                if let (Some(s), Some(d)) = (instr.op.derivation_source().and_then(|s| self.value_id(fi, s)), dst) {
                    out.push(here(s, d, matches!(instr.op, Op::Move { .. })));
                }
                let args = match &instr.op {
                    Op::Call { args, .. } | Op::ICall { args, .. } => args,
                    _ => continue,
                };
                for &g in &self.callees[&(fi, i)] {
                    let callee = &self.program.functions[g];
                    for (a, param) in args.iter().zip(&callee.params) {
                        if let (Some(s), Some(d)) = (self.pointer_operand(fi, a), self.value_id(g, &param.name)) {
                            out.push(Edge { dst_def: Some(DefSite::Entry), unresolved: true, ..here(s, d, false) });
                        }
                    }
                    let Some(d) = dst else { continue };
                    for r in &callee.body {
                        if let Op::Ret { value: Some(v) } = &r.op {
                            if let Some(s) = self.pointer_operand(g, v) {
                                out.push(Edge { unresolved: true, ..here(s, d, false) });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn collect_edges(&mut self) {
        let value_edges = self.value_edges();
        let nv = self.values.len();
        let mut uf = UnionFind((0..nv).collect());
        for e in &value_edges {
            uf.union(e.src, e.dst);
        }
        // (function, index, object value, field, pointer value, is_store)
        let mut accesses = Vec::new();
        for &fi in &self.funcs {
            for (i, instr) in self.program.functions[fi].body.iter().enumerate() {
                match &instr.op {
                    Op::StoreField { target, value } => {
                        if let (Some(o), Some(v)) =
                            (self.value_id(fi, &target.object), self.pointer_operand(fi, value))
                        {
                            accesses.push((fi, i, o, target.field.clone(), v, true));
                        }
                    }
                    Op::LoadField { source, .. } => {
                        let dst = instr.result.as_deref().and_then(|r| self.value_id(fi, r));
                        if let (Some(o), Some(d)) = (self.value_id(fi, &source.object), dst) {
                            accesses.push((fi, i, o, source.field.clone(), d, false));
                        }
                    }
                    _ => {}
                }
            }
        }
        // Pointers flowing through the same field of the same object class
        // refer to the same objects; merge until the field keys settle.
        loop {
            let mut groups: HashMap<(usize, &str), usize> = HashMap::new();
            let mut changed = false;
            for (_, _, o, field, v, _) in &accesses {
                let key = (uf.find(*o), field.as_str());
                match groups.get(&key) {
                    Some(&first) => changed |= uf.union(first, *v),
                    None => {
                        groups.insert(key, *v);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut field_ids: HashMap<(usize, String), usize> = HashMap::new();
        let mut edges = value_edges;
        for (fi, i, o, field, v, is_store) in accesses {
            let key = (uf.find(o), field);
            let next = nv + self.fields.len();
            let node = *field_ids.entry(key.clone()).or_insert_with(|| {
                self.fields.push(key);
                next
            });
            let (src, dst, dst_def) = if is_store { (v, node, None) } else { (node, v, Some(DefSite::At(i))) };
            edges.push(Edge { src, dst, transfer: false, func: fi, index: i, dst_def, unresolved: true });
        }
        edges.sort_by_key(|e| (self.funcs.iter().position(|&f| f == e.func), e.index));
        let n = self.node_count();
        self.succ = vec![Vec::new(); n];
        self.pred = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            self.succ[e.src].push(k);
            self.pred[e.dst].push(k);
        }
        self.edges = edges;
    }

    fn local_values(&self, fi: usize) -> Vec<usize> {
        (0..self.values.len()).filter(|&v| self.values[v].func == fi).collect()
    }

    /// May-validity of every pointer value before every instruction: a value
    /// is valid at a point if some path from entry reaches it with the value
    /// defined and not since dropped, forgotten, scope-ended or moved out.
    fn compute_validity(&mut self) {
        for &fi in &self.funcs {
            let f = &self.program.functions[fi];
            let locals = self.local_values(fi);
            let slot: HashMap<&str, usize> =
                locals.iter().enumerate().map(|(k, &v)| (self.values[v].name.as_str(), k)).collect();
            let n = f.body.len();
            let mut before = vec![vec![false; locals.len()]; n + 1];
            let mut reached = vec![false; n + 1];
            for p in &f.params {
                if let Some(&k) = slot.get(p.name.as_str()) {
                    before[0][k] = true;
                }
            }
            reached[0] = true;
            let mut work = vec![0usize];
            while let Some(i) = work.pop() {
                if i >= n {
                    continue;
                }
                let instr = &f.body[i];
                let mut out = before[i].clone();
                let killed = instr.op.dealloc_owner().or(match &instr.op {
                    Op::Move { src } => Some(src.as_str()),
                    _ => None,
                });
                if let Some(&k) = killed.and_then(|v| slot.get(v)) {
                    out[k] = false;
                }
                if let Some(&k) = instr.result.as_deref().and_then(|r| slot.get(r)) {
                    out[k] = true;
                }
                for s in f.successors(i) {
                    let mut grew = !reached[s];
                    reached[s] = true;
                    for (dst, &bit) in before[s].iter_mut().zip(&out) {
                        if bit && !*dst {
                            *dst = true;
                            grew = true;
                        }
                    }
                    if grew {
                        work.push(s);
                    }
                }
            }
            self.valid_before.insert(fi, before);
        }
    }

    pub fn valid_before(&self, v: usize, index: usize) -> bool {
        let fi = self.values[v].func;
        let k = self.local_values(fi).iter().position(|&x| x == v).expect("value of function");
        self.valid_before[&fi].get(index).is_some_and(|row| row[k])
    }

    /// Instruction indices in `caller` that may call `callee`.
    pub fn call_sites(&self, caller: usize, callee: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .callees
            .iter()
            .filter(|((f, _), targets)| *f == caller && targets.contains(&callee))
            .map(|((_, i), _)| *i)
            .collect();
        out.sort_unstable();
        out
    }

    /// Whether `node` is already dead when `source` comes into existence:
    /// judged at the source definition inside the same function, or at every
    /// call into the source's function from `node`'s function. With no such
    /// ordering point the node counts as valid.
    pub fn invalidated_before(&self, node: usize, source: usize) -> bool {
        if self.is_field(node) {
            return false;
        }
        let nf = self.values[node].func;
        let sf = self.values[source].func;
        let points = match self.values[source].defs.first() {
            Some(DefSite::At(d)) if nf == sf => vec![*d],
            _ => self.call_sites(nf, sf),
        };
        !points.is_empty() && points.iter().all(|&p| !self.valid_before(node, p))
    }

    /// Derivation edges feeding one particular definition of `v`.
    pub fn def_preds(&self, v: usize, def: DefSite) -> impl Iterator<Item = &Edge> {
        self.pred[v].iter().map(|&e| &self.edges[e]).filter(move |e| e.dst_def == Some(def))
    }

    pub fn def_instruction(&self, v: usize, def: DefSite) -> Option<&'p crate::ir::Instruction> {
        match def {
            DefSite::At(i) => Some(&self.func(self.values[v].func).body[i]),
            DefSite::Entry => None,
        }
    }
}
