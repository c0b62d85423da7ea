//! Shadow-memory baseline: red zones around every object, poisoned freed
//! memory, and a FIFO quarantine delaying reuse. Every allocation, memory
//! access and free is instrumented.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::ir::{Instruction, Op, Program};
use crate::runtime::{
    Ctx, ExecutionReport, Gate, Interp, Memory, Mode, Monitor, RunOptions, RuntimeError, Violation, ViolationClass,
    HEAP_BASE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsanConfig {
    /// Red-zone cells on each side of an object.
    pub redzone: i64,
    /// Freed regions held back before reuse.
    pub quarantine: usize,
}

impl Default for AsanConfig {
    fn default() -> Self {
        AsanConfig { redzone: 16, quarantine: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shadow {
    Addressable,
    RedZone,
    Freed,
}

#[derive(Debug, Clone, Copy)]
struct Region {
    start: i64,
    len: i64,
    body: i64,
    size: i64,
}

pub struct AsanMonitor {
    cfg: AsanConfig,
    /// Cells absent from the map are unallocated.
    shadow: HashMap<i64, Shadow>,
    live: HashMap<i64, Region>,
    quarantine: VecDeque<Region>,
    free_list: Vec<(i64, i64)>,
    bump: i64,
    strict: bool,
    pub violations: Vec<Violation>,
    pub hits: BTreeMap<String, u64>,
    halt: bool,
}

impl AsanMonitor {
    pub fn new(cfg: AsanConfig, strict: bool) -> Self {
        AsanMonitor {
            cfg,
            shadow: HashMap::new(),
            live: HashMap::new(),
            quarantine: VecDeque::new(),
            free_list: Vec::new(),
            bump: HEAP_BASE,
            strict,
            violations: Vec::new(),
            hits: BTreeMap::new(),
            halt: false,
        }
    }

    pub fn shadow(&self, addr: i64) -> Option<Shadow> {
        self.shadow.get(&addr).copied()
    }

    fn mark(&mut self, from: i64, len: i64, s: Option<Shadow>) {
        for a in from..from + len {
            match s {
                Some(s) => self.shadow.insert(a, s),
                None => self.shadow.remove(&a),
            };
        }
    }

    fn hit(&mut self, what: &str) {
        *self.hits.entry(what.to_string()).or_default() += 1;
    }

    fn classify_access(&self, addr: i64) -> Option<(ViolationClass, String)> {
        if addr < HEAP_BASE {
            return Some((ViolationClass::Npd, format!("access to address {addr}")));
        }
        match self.shadow(addr) {
            Some(Shadow::Addressable) => None,
            Some(Shadow::RedZone) => Some((ViolationClass::Oob, format!("red zone at {addr}"))),
            Some(Shadow::Freed) => Some((ViolationClass::Uaf, format!("freed memory at {addr}"))),
            None => Some((ViolationClass::Oob, format!("unallocated memory at {addr}"))),
        }
    }

    fn classify_free(&self, addr: i64) -> Option<(ViolationClass, String)> {
        if addr < HEAP_BASE {
            return Some((ViolationClass::Npd, "free of null".into()));
        }
        match self.shadow(addr) {
            Some(Shadow::Freed) => Some((ViolationClass::Df, format!("double free of {addr}"))),
            Some(Shadow::Addressable) if self.live.contains_key(&addr) => None,
            _ => Some((ViolationClass::Oob, format!("free of non-object address {addr}"))),
        }
    }
}

impl Monitor for AsanMonitor {
    fn place(&mut self, _mem: &mut Memory, size: i64) -> i64 {
        let r = self.cfg.redzone;
        let len = size + 2 * r;
        let start = match self.free_list.iter().position(|&(_, l)| l >= len) {
            Some(i) => {
                let (s, l) = self.free_list[i];
                if l == len {
                    self.free_list.remove(i);
                } else {
                    self.free_list[i] = (s + len, l - len);
                }
                s
            }
            None => {
                self.bump += len;
                self.bump - len
            }
        };
        self.mark(start, r, Some(Shadow::RedZone));
        self.mark(start + r, size, Some(Shadow::Addressable));
        self.mark(start + r + size, r, Some(Shadow::RedZone));
        self.live.insert(start + r, Region { start, len, body: start + r, size });
        start + r
    }

    fn released(&mut self, mem: &Memory, obj: usize) {
        let Some(region) = self.live.remove(&mem.objects[obj].start) else { return };
        self.mark(region.body, region.size, Some(Shadow::Freed));
        self.quarantine.push_back(region);
        while self.quarantine.len() > self.cfg.quarantine {
            let old = self.quarantine.pop_front().expect("non-empty quarantine");
            self.mark(old.start, old.len, None);
            self.free_list.push((old.start, old.len));
        }
    }

    fn before(&mut self, cx: &Ctx, instr: &Instruction) -> Result<Gate, RuntimeError> {
        let (name, found) = match &instr.op {
            Op::DerefRead { ptr } | Op::DerefWrite { ptr, .. } => {
                self.hit("access");
                (ptr, self.classify_access(cx.ptr(ptr)?.addr))
            }
            Op::StoreField { target: f, .. } | Op::LoadField { source: f, .. } => {
                self.hit("access");
                (&f.object, self.classify_access(cx.ptr(&f.object)?.addr))
            }
            Op::VecPush { vec } => {
                self.hit("access");
                let p = cx.ptr(vec)?;
                let at = match p.obj {
                    Some(o) => cx.mem.objects[o].start + cx.mem.objects[o].vec_len,
                    None => p.addr,
                };
                (vec, self.classify_access(at))
            }
            Op::Drop { owner } | Op::EndScope { owner } => {
                self.hit("free");
                (owner, self.classify_free(cx.ptr(owner)?.addr))
            }
            op if op.is_allocation() => {
                self.hit("alloc");
                return Ok(Gate::Proceed);
            }
            _ => return Ok(Gate::Proceed),
        };
        let Some((class, detail)) = found else { return Ok(Gate::Proceed) };
        self.violations.push(Violation {
            class,
            function: cx.function_name().to_string(),
            index: cx.index,
            pointer: name.clone(),
            detail,
        });
        if self.strict {
            self.halt = true;
        }
        Ok(Gate::Poison)
    }

    fn halted(&self) -> bool {
        self.halt
    }
}

/// Static sites the baseline instruments in the reachable functions:
/// allocations, dereferences, field accesses, pushes and frees.
pub fn count_access_sites(p: &Program, reachable: &BTreeSet<String>) -> usize {
    p.functions
        .iter()
        .filter(|f| reachable.contains(&f.name))
        .flat_map(|f| &f.body)
        .filter(|i| {
            i.op.is_allocation()
                || matches!(
                    i.op,
                    Op::DerefRead { .. }
                        | Op::DerefWrite { .. }
                        | Op::StoreField { .. }
                        | Op::LoadField { .. }
                        | Op::VecPush { .. }
                        | Op::Drop { .. }
                        | Op::EndScope { .. }
                )
        })
        .count()
}

pub fn execute_asan(p: &Program, cfg: AsanConfig, opts: &RunOptions) -> Result<ExecutionReport, RuntimeError> {
    let mut it = Interp::new(p, AsanMonitor::new(cfg, opts.strict), opts.budget);
    it.run_entry()?;
    Ok(ExecutionReport {
        schema: 1,
        mode: Mode::Asan,
        violations: it.monitor.violations,
        faults: it.faults,
        executed_instructions: it.executed,
        check_hits: it.monitor.hits,
    })
}
