//! Seeded random program generator for the oracle and property tests.
//!
//! Programs mix every derivation form with moves, frees, branches, counted
//! loops, direct and indirect calls. Helpers only call helpers defined after
//! them, so there is no recursion; branch arms and loop bodies are scoped so
//! every use is defined on every path.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ir::{parse_program, print_program, Program, ValueKind};

/// Largest accepted `size`.
pub const MAX_SIZE: usize = 400;

const SIGNATURES: &[(&[ValueKind], Option<ValueKind>)] = &[
    (&[ValueKind::Raw], Some(ValueKind::Raw)),
    (&[ValueKind::Owner], Some(ValueKind::Raw)),
    (&[ValueKind::Raw, ValueKind::Scalar], Some(ValueKind::Owner)),
    (&[ValueKind::Raw], None),
];

#[derive(Clone)]
struct Helper {
    name: String,
    params: Vec<ValueKind>,
    ret: Option<ValueKind>,
}

impl Helper {
    fn sig(&self) -> String {
        let ps: Vec<&str> = self.params.iter().map(|k| k.keyword()).collect();
        match self.ret {
            Some(r) => format!("sig({}->{})", ps.join(","), r.keyword()),
            None => format!("sig({})", ps.join(",")),
        }
    }
}

#[derive(Clone, Default)]
struct Pools {
    owners: Vec<String>,
    raws: Vec<String>,
    scalars: Vec<String>,
}

impl Pools {
    fn of(&mut self, k: ValueKind) -> &mut Vec<String> {
        match k {
            ValueKind::Owner => &mut self.owners,
            ValueKind::Raw => &mut self.raws,
            _ => &mut self.scalars,
        }
    }
}

struct FnGen<'a> {
    rng: &'a mut ChaCha8Rng,
    callees: &'a [Helper],
    lines: Vec<String>,
    pools: Pools,
    next_value: usize,
    next_label: usize,
    depth: usize,
}

impl FnGen<'_> {
    fn fresh(&mut self) -> String {
        self.next_value += 1;
        format!("v{}", self.next_value - 1)
    }

    fn label(&mut self) -> usize {
        self.next_label += 1;
        self.next_label - 1
    }

    fn emit(&mut self, s: String) {
        self.lines.push(format!("  {s}"));
    }

    fn pick(&mut self, k: ValueKind) -> Option<String> {
        let pool = self.pools.of(k).clone();
        pool.choose(self.rng).cloned()
    }

    fn define(&mut self, k: ValueKind, rhs: String) -> String {
        let v = self.fresh();
        self.emit(format!("%{v} = {rhs}"));
        self.pools.of(k).push(v.clone());
        v
    }

    fn raw_attrs(&mut self) -> &'static str {
        if self.rng.gen_bool(0.4) {
            " !unsafe !rawptr"
        } else {
            " !rawptr"
        }
    }

    /// A value of kind `k`, creating one when none is in scope.
    fn value(&mut self, k: ValueKind) -> String {
        if let Some(v) = self.pick(k) {
            return v;
        }
        match k {
            ValueKind::Owner => {
                let n = self.rng.gen_range(1..8);
                self.define(k, format!("heap_alloc {n}"))
            }
            ValueKind::Raw => self.define(k, "null !rawptr".into()),
            _ => {
                let n = self.rng.gen_range(0..4);
                self.define(k, format!("copy {n}"))
            }
        }
    }

    fn forget_owner(&mut self, o: &str) {
        self.pools.owners.retain(|x| x != o);
    }

    fn statement(&mut self) {
        let roll = self.rng.gen_range(0..100);
        match roll {
            0..=9 => {
                let n = self.rng.gen_range(1..10);
                let op = match self.rng.gen_range(0..3) {
                    0 => format!("heap_alloc {n}"),
                    1 => format!("heap_alloc_uninit {n}"),
                    _ => format!("vec_new {n}, {}", self.rng.gen_range(0..=n)),
                };
                self.define(ValueKind::Owner, op);
            }
            10..=13 => {
                let n = self.rng.gen_range(1..10);
                self.define(ValueKind::Raw, format!("raw_alloc {n} !rawptr"));
            }
            14..=23 => {
                let o = self.value(ValueKind::Owner);
                let count = if self.rng.gen_bool(0.3) {
                    format!(" count {}", self.rng.gen_range(1..6))
                } else {
                    String::new()
                };
                self.define(ValueKind::Raw, format!("as_raw %{o}{count} !rawptr"));
            }
            24..=28 => {
                let r = self.value(ValueKind::Raw);
                self.define(ValueKind::Owner, format!("box_from_raw %{r} !unsafe !rawptr"));
            }
            29..=33 => {
                let o = self.value(ValueKind::Owner);
                self.forget_owner(&o);
                self.define(ValueKind::Owner, format!("move %{o}"));
            }
            34..=38 => {
                let r = self.value(ValueKind::Raw);
                self.define(ValueKind::Raw, format!("copy %{r} !rawptr"));
            }
            39..=44 => {
                let r = self.value(ValueKind::Raw);
                let d = self.rng.gen_range(-1..4);
                self.define(ValueKind::Raw, format!("gep %{r}, {d} !rawptr"));
            }
            45..=48 => {
                let h = self.value(ValueKind::Owner);
                let f = self.rng.gen_range(0..2);
                if self.rng.gen_bool(0.7) {
                    let r = self.value(ValueKind::Raw);
                    self.emit(format!("store_field %{h}.r{f}, %{r} !rawptr"));
                } else {
                    let s = self.value(ValueKind::Scalar);
                    self.emit(format!("store_field %{h}.s{f}, %{s}"));
                }
            }
            49..=52 => {
                let h = self.value(ValueKind::Owner);
                let f = self.rng.gen_range(0..2);
                let a = self.raw_attrs();
                self.define(ValueKind::Raw, format!("load_field %{h}.r{f} : raw{a}"));
            }
            53..=60 => {
                let (p, a) = if self.rng.gen_bool(0.6) {
                    let r = self.value(ValueKind::Raw);
                    (r, self.raw_attrs())
                } else {
                    (self.value(ValueKind::Owner), "")
                };
                if self.rng.gen_bool(0.6) {
                    self.define(ValueKind::Scalar, format!("deref_read %{p}{a}"));
                } else {
                    let s = self.value(ValueKind::Scalar);
                    self.emit(format!("deref_write %{p}, %{s}{a}"));
                }
            }
            61..=66 => {
                let o = self.value(ValueKind::Owner);
                let op = ["drop", "end_scope", "forget"].choose(self.rng).copied().unwrap_or("drop");
                self.forget_owner(&o);
                self.emit(format!("{op} %{o}"));
            }
            67..=69 => {
                let o = self.value(ValueKind::Owner);
                match self.rng.gen_range(0..3) {
                    0 => self.emit(format!("vec_push %{o}")),
                    1 => self.emit(format!("vec_pop %{o}")),
                    _ => {
                        let n = self.rng.gen_range(0..6);
                        self.emit(format!("api_set_len %{o}, {n} !unsafe"));
                    }
                }
            }
            70..=71 => {
                let s = self.value(ValueKind::Scalar);
                let n = self.rng.gen_range(1..4);
                self.define(ValueKind::Scalar, format!("api_unchecked %{s}, add, {n} !unsafe"));
            }
            72..=79 if !self.callees.is_empty() => self.call(false),
            80..=85 if !self.callees.is_empty() => self.call(true),
            86..=92 if self.depth < 2 => self.branch(),
            93..=99 if self.depth < 2 => self.counted_loop(),
            _ => {
                let r = self.value(ValueKind::Raw);
                self.define(ValueKind::Raw, format!("copy %{r} !rawptr"));
            }
        }
    }

    fn call(&mut self, indirect: bool) {
        let h = self.callees.choose(self.rng).cloned().expect("callees checked non-empty");
        let args: Vec<String> = h.params.iter().map(|&k| format!("%{}", self.value(k))).collect();
        let rawptr = h.params.contains(&ValueKind::Raw) || h.ret == Some(ValueKind::Raw);
        let attr = if rawptr { " !rawptr" } else { "" };
        let callee = if indirect {
            let fp = self.fresh();
            self.emit(format!("%{fp} = copy @{}", h.name));
            format!("icall %{fp}({}) {}", args.join(", "), h.sig())
        } else {
            format!("call {}({})", h.name, args.join(", "))
        };
        match h.ret {
            Some(k) => {
                self.define(k, format!("{callee}{attr}"));
            }
            None => self.emit(format!("{callee}{attr}")),
        }
    }

    fn block(&mut self, n: usize) {
        let saved = self.pools.clone();
        self.depth += 1;
        for _ in 0..n {
            self.statement();
        }
        self.depth -= 1;
        self.pools = saved;
    }

    fn branch(&mut self) {
        let l = self.label();
        let c = self.value(ValueKind::Scalar);
        self.emit(format!("cbr %{c}, Lt{l}, Le{l}"));
        self.lines.push(format!("Lt{l}:"));
        let n = self.rng.gen_range(1..4);
        self.block(n);
        self.emit(format!("br Lj{l}"));
        self.lines.push(format!("Le{l}:"));
        let n = self.rng.gen_range(0..3);
        self.block(n);
        self.emit(format!("br Lj{l}"));
        self.lines.push(format!("Lj{l}:"));
    }

    fn counted_loop(&mut self) {
        let l = self.label();
        let i = self.fresh();
        let trips = self.rng.gen_range(1..4);
        self.emit(format!("%{i} = copy {trips}"));
        // A raw pointer redefined in the body derives from itself.
        let carried = self.pick(ValueKind::Raw).filter(|_| self.rng.gen_bool(0.6));
        self.lines.push(format!("Lh{l}:"));
        self.emit(format!("cbr %{i}, Lb{l}, Lx{l}"));
        self.lines.push(format!("Lb{l}:"));
        if let Some(q) = &carried {
            self.emit(format!("%{q} = gep %{q}, 1 !rawptr"));
        }
        let n = self.rng.gen_range(1..4);
        self.block(n);
        self.emit(format!("%{i} = api_unchecked %{i}, sub, 1 !unsafe"));
        self.emit(format!("br Lh{l}"));
        self.lines.push(format!("Lx{l}:"));
    }
}

fn function(
    rng: &mut ChaCha8Rng,
    header: String,
    params: &[(String, ValueKind)],
    ret: Option<ValueKind>,
    callees: &[Helper],
    budget: usize,
) -> String {
    let mut g = FnGen {
        rng,
        callees,
        lines: vec![header],
        pools: Pools::default(),
        next_value: 0,
        next_label: 0,
        depth: 0,
    };
    for (name, k) in params {
        g.pools.of(*k).push(name.clone());
    }
    let start = g.lines.len();
    while g.lines.len() - start < budget {
        g.statement();
    }
    match ret {
        Some(k) => {
            let v = g.value(k);
            let attr = if k == ValueKind::Raw { " !rawptr" } else { "" };
            g.emit(format!("ret %{v}{attr}"));
        }
        None => g.emit("ret".into()),
    }
    g.lines.push("}".into());
    g.lines.join("\n")
}

/// Source text for `(seed, size)`; `size` is roughly the instruction count.
pub fn generate_source(seed: u64, size: usize) -> String {
    let size = size.min(MAX_SIZE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_helpers = (size / 8).min(4);
    let helpers: Vec<Helper> = (0..n_helpers)
        .map(|i| {
            let (params, ret) = SIGNATURES[rng.gen_range(0..SIGNATURES.len())];
            Helper { name: format!("f{i}"), params: params.to_vec(), ret }
        })
        .collect();
    let helper_budget = size / (n_helpers + 2);
    let mut out = Vec::new();
    out.push(function(
        &mut rng,
        "fn main() entry {".into(),
        &[],
        None,
        &helpers,
        size.saturating_sub(helper_budget * n_helpers),
    ));
    for (i, h) in helpers.iter().enumerate() {
        let params: Vec<(String, ValueKind)> =
            h.params.iter().enumerate().map(|(j, &k)| (format!("a{j}"), k)).collect();
        let decl: Vec<String> = params.iter().map(|(n, k)| format!("%{n}: {k}")).collect();
        let ret = h.ret.map(|k| format!(" -> {k}")).unwrap_or_default();
        let header = format!("fn {}({}){ret} {{", h.name, decl.join(", "));
        out.push(function(&mut rng, header, &params, h.ret, &helpers[i + 1..], helper_budget));
    }
    let text = out.join("\n\n");
    let p = parse_program(&text).unwrap_or_else(|e| panic!("generated text does not parse: {e:?}\n{text}"));
    print_program(&p)
}

pub fn generate(seed: u64, size: usize) -> Program {
    parse_program(&generate_source(seed, size)).expect("generated text parses")
}
