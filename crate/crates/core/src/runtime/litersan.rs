use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::instrument::{Access, Check, InstrClass, InstrumentationPlan, Payload, Placement, Site, SpatialBinding, Update};
use crate::ir::{Instruction, Op, Operand};
use crate::metadata::Bound;

use super::interp::{Ctx, Def, Gate, Monitor};
use super::{Ptr, RuntimeError, Value, Violation, ViolationClass};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialMeta {
    /// Index of the initialized-length record, shared by every instance
    /// derived from the same activation.
    pub init: usize,
    /// Element index of this pointer's region within the object (non-zero
    /// for views).
    pub base: i64,
    pub capacity: i64,
    pub offset: i64,
    pub obj_start: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TemporalRecord {
    pub dangling: bool,
    pub owners: BTreeSet<u64>,
    pub members: BTreeSet<u64>,
}

/// Metadata lives here, keyed by pointer instance, never in the values.
#[derive(Debug, Clone, Default)]
pub struct MetadataStore {
    pub spatial: HashMap<u64, SpatialMeta>,
    pub init_len: Vec<i64>,
    /// Forward map: record → pointer set and owners. Merged records point
    /// at their representative through `parent`.
    pub forward: Vec<TemporalRecord>,
    parent: Vec<usize>,
    /// Reverse map: instance → record.
    pub reverse: HashMap<u64, usize>,
}

impl MetadataStore {
    pub fn find(&self, mut r: usize) -> usize {
        while self.parent[r] != r {
            r = self.parent[r];
        }
        r
    }

    fn new_record(&mut self) -> usize {
        self.forward.push(TemporalRecord::default());
        self.parent.push(self.forward.len() - 1);
        self.forward.len() - 1
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return a;
        }
        let (keep, gone) = (a.min(b), a.max(b));
        let moved = std::mem::take(&mut self.forward[gone]);
        let k = &mut self.forward[keep];
        k.dangling |= moved.dangling;
        k.owners.extend(moved.owners);
        k.members.extend(moved.members);
        self.parent[gone] = keep;
        keep
    }

    pub fn record_of(&self, instance: u64) -> Option<usize> {
        self.reverse.get(&instance).map(|&r| self.find(r))
    }

    /// reverse(m) = s ⇒ m ∈ forward(s).members, and every member maps back.
    pub fn check_consistency(&self) -> Result<(), String> {
        for (&m, &r) in &self.reverse {
            if !self.forward[self.find(r)].members.contains(&m) {
                return Err(format!("instance {m} maps to record {r} which does not list it"));
            }
        }
        for (r, rec) in self.forward.iter().enumerate() {
            if self.parent[r] != r {
                if !rec.members.is_empty() {
                    return Err(format!("merged record {r} still has members"));
                }
                continue;
            }
            for m in &rec.members {
                if self.record_of(*m) != Some(r) {
                    return Err(format!("member {m} of record {r} has no reverse entry"));
                }
            }
        }
        Ok(())
    }
}

pub struct LitersanMonitor<'a> {
    plan: &'a InstrumentationPlan,
    strict: bool,
    debug: bool,
    pub store: MetadataStore,
    pub violations: Vec<Violation>,
    pub hits: BTreeMap<InstrClass, u64>,
    reported: bool,
    halt: bool,
}

type Outcome = Result<Option<(ViolationClass, String)>, RuntimeError>;

fn internal(msg: String) -> RuntimeError {
    RuntimeError::Internal(msg)
}

impl<'a> LitersanMonitor<'a> {
    pub fn new(plan: &'a InstrumentationPlan, strict: bool, debug: bool) -> Self {
        LitersanMonitor {
            plan,
            strict,
            debug,
            store: MetadataStore::default(),
            violations: Vec::new(),
            hits: BTreeMap::new(),
            reported: false,
            halt: false,
        }
    }

    fn bound(cx: &Ctx, b: &Bound) -> Result<i64, RuntimeError> {
        match b {
            Bound::Literal(n) => Ok(*n),
            Bound::Symbol(s) => cx.int(&Operand::Value(s.clone())),
        }
    }

    fn spatial_of(&self, p: &Ptr, name: &str) -> Result<&SpatialMeta, RuntimeError> {
        self.store.spatial.get(&p.instance).ok_or_else(|| internal(format!("%{name} has no spatial metadata")))
    }

    fn zero_meta(&mut self, p: &Ptr) -> SpatialMeta {
        self.store.init_len.push(0);
        SpatialMeta { init: self.store.init_len.len() - 1, base: 0, capacity: 0, offset: 0, obj_start: p.addr }
    }

    fn inherited(&mut self, origin: Option<&Value>, name: &str) -> Result<Option<SpatialMeta>, RuntimeError> {
        match origin {
            Some(Value::Ptr(o)) => match self.store.spatial.get(&o.instance) {
                Some(m) => Ok(Some(m.clone())),
                None if o.obj.is_none() => Ok(None),
                None => Err(internal(format!("%{name} inherits from an unregistered pointer"))),
            },
            _ => Ok(None),
        }
    }

    fn activate(&mut self, cx: &Ctx, check: &Check, origin: Option<&Value>, op: Option<&Op>) -> Outcome {
        let Payload::Activate { spatial, temporal } = &check.payload else { unreachable!() };
        let name = &check.pointer.value;
        let p = cx.ptr(name)?;
        if let Some(binding) = spatial {
            let meta = match binding {
                SpatialBinding::Root { capacity, init_len } => {
                    let cap = Self::bound(cx, capacity)?.max(0);
                    let init = Self::bound(cx, init_len)?.clamp(0, cap);
                    self.store.init_len.push(init);
                    SpatialMeta { init: self.store.init_len.len() - 1, base: 0, capacity: cap, offset: 0, obj_start: p.addr }
                }
                SpatialBinding::View { count } => {
                    let count = Self::bound(cx, count)?.max(0);
                    match self.inherited(origin, name)? {
                        Some(m) => SpatialMeta { base: m.base + m.offset, capacity: count, offset: 0, ..m },
                        None => self.zero_meta(&p),
                    }
                }
                SpatialBinding::Inherit => match self.inherited(origin, name)? {
                    Some(m) => m,
                    None => self.zero_meta(&p),
                },
            };
            self.store.spatial.insert(p.instance, meta);
        }
        if let Some(t) = temporal {
            let from_origin = match origin {
                Some(Value::Ptr(o)) => self.store.record_of(o.instance),
                _ => None,
            };
            let from_handle = p.handle.filter(|_| t.owner).and_then(|h| {
                (0..self.store.forward.len())
                    .find(|&r| self.store.parent[r] == r && self.store.forward[r].owners.contains(&h))
            });
            let rec = match (from_origin, from_handle) {
                (Some(a), Some(b)) => self.store.union(a, b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => self.store.new_record(),
            };
            let entry = &mut self.store.forward[rec];
            if t.owner {
                // A move hands the origin's ownership over to the result.
                if let (Some(Op::Move { .. }), Some(Value::Ptr(o))) = (op, origin) {
                    if let Some(h) = o.handle {
                        entry.owners.remove(&h);
                    }
                }
                entry.owners.extend(p.handle);
            }
            entry.members.insert(p.instance);
            self.store.reverse.insert(p.instance, rec);
        }
        Ok(None)
    }

    fn run(&mut self, cx: &Ctx, instr: Option<&Instruction>, check: &Check, origin: Option<&Value>) -> Outcome {
        *self.hits.entry(check.class()).or_default() += 1;
        let name = &check.pointer.value;
        match &check.payload {
            Payload::Activate { .. } => self.activate(cx, check, origin, instr.map(|i| &i.op)),
            Payload::SpatialUpdate(u) => {
                let p = cx.ptr(name)?;
                let m = self.spatial_of(&p, name)?.clone();
                let len = self.store.init_len[m.init];
                let mut out = None;
                match u {
                    Update::Arith { delta } => self.store.spatial.get_mut(&p.instance).unwrap().offset += delta,
                    Update::ArithDynamic { delta } => {
                        let d = cx.int(&Operand::Value(delta.clone()))?;
                        self.store.spatial.get_mut(&p.instance).unwrap().offset += d;
                    }
                    Update::Push => {
                        if m.base + len >= m.capacity {
                            out = Some((ViolationClass::Oob, format!("push at capacity {}", m.capacity)));
                        } else {
                            self.store.init_len[m.init] = len + 1;
                        }
                    }
                    Update::Pop => self.store.init_len[m.init] = (len - 1).max(0),
                    Update::SetLen => {
                        let n = match instr.map(|i| &i.op) {
                            Some(Op::SetLen { len, .. }) => cx.int(len)?,
                            _ => return Err(internal("set_len update away from api_set_len".into())),
                        };
                        if n < 0 || n > m.capacity {
                            out = Some((
                                ViolationClass::Oob,
                                format!("new length {n} exceeds the capacity {}", m.capacity),
                            ));
                        }
                        self.store.init_len[m.init] = n.clamp(0, m.capacity);
                    }
                }
                Ok(out)
            }
            Payload::Deactivate { no_free } => {
                let p = cx.ptr(name)?;
                let r = self
                    .store
                    .record_of(p.instance)
                    .ok_or_else(|| internal(format!("%{name} has no temporal record")))?;
                let rec = &mut self.store.forward[r];
                if *no_free {
                    if let Some(h) = p.handle {
                        rec.owners.remove(&h);
                    }
                    if rec.owners.is_empty() {
                        rec.dangling = true;
                    }
                } else {
                    rec.dangling = true;
                }
                Ok(None)
            }
            Payload::SpatialCheck(access) => {
                let p = cx.ptr(name)?;
                if p.obj.is_none() {
                    return Ok(Some((ViolationClass::Npd, "null pointer".into())));
                }
                let m = self.spatial_of(&p, name)?.clone();
                if self.debug && m.offset != p.addr - m.obj_start - m.base {
                    return Err(internal(format!(
                        "stale offset for %{name}: metadata {} but address says {}",
                        m.offset,
                        p.addr - m.obj_start - m.base
                    )));
                }
                let pos = m.base + m.offset;
                let len = self.store.init_len[m.init];
                Ok(match access {
                    Access::Arith if m.offset < 0 || m.offset > m.capacity => Some((
                        ViolationClass::Oob,
                        format!("arithmetic to offset {} outside capacity {}", m.offset, m.capacity),
                    )),
                    Access::Arith => None,
                    _ if m.offset < 0 || m.offset >= m.capacity => Some((
                        ViolationClass::Oob,
                        format!("access at offset {} with capacity {}", m.offset, m.capacity),
                    )),
                    Access::Read if pos >= len => Some((
                        ViolationClass::Ubi,
                        format!("read at offset {} with initialized length {}", m.offset, len - m.base),
                    )),
                    Access::Write if pos >= len => {
                        self.store.init_len[m.init] = pos + 1;
                        None
                    }
                    _ => None,
                })
            }
            Payload::TemporalCheck { dealloc } => {
                let p = cx.ptr(name)?;
                if p.obj.is_none() {
                    return Ok(Some((ViolationClass::Npd, "null pointer".into())));
                }
                let r = self
                    .store
                    .record_of(p.instance)
                    .ok_or_else(|| internal(format!("%{name} has no temporal record")))?;
                Ok(match (self.store.forward[r].dangling, dealloc) {
                    (true, true) => Some((ViolationClass::Df, "deallocation through a dangling pointer".into())),
                    (true, false) => Some((ViolationClass::Uaf, "dereference of a dangling pointer".into())),
                    _ => None,
                })
            }
        }
    }

    fn report(&mut self, cx: &Ctx, check: &Check, class: ViolationClass, detail: String) {
        if self.reported {
            return;
        }
        self.reported = true;
        self.violations.push(Violation {
            class,
            function: cx.function_name().to_string(),
            index: cx.index,
            pointer: check.pointer.value.clone(),
            detail,
        });
        if self.strict {
            self.halt = true;
        }
    }

    fn debug_check(&self) -> Result<(), RuntimeError> {
        if self.debug {
            self.store.check_consistency().map_err(|m| internal(format!("dual map: {m}")))?;
        }
        Ok(())
    }
}

impl Monitor for LitersanMonitor<'_> {
    fn enter(&mut self, cx: &Ctx, params: &[Def]) -> Result<(), RuntimeError> {
        let plan = self.plan;
        for check in plan.checks_at(cx.function_name(), Site::Entry) {
            let origin = params.iter().find(|d| d.name == check.pointer.value).and_then(|d| d.origin);
            self.run(cx, None, check, origin)?;
        }
        self.debug_check()
    }

    fn before(&mut self, cx: &Ctx, instr: &Instruction) -> Result<Gate, RuntimeError> {
        self.reported = false;
        let plan = self.plan;
        let mut gate = Gate::Proceed;
        for check in plan.checks_at(cx.function_name(), Site::At(cx.index)) {
            if check.placement != Placement::Pre || gate == Gate::Poison {
                continue;
            }
            if let Some((class, detail)) = self.run(cx, Some(instr), check, None)? {
                self.report(cx, check, class, detail);
                gate = Gate::Poison;
            }
        }
        Ok(gate)
    }

    fn after(&mut self, cx: &Ctx, instr: &Instruction, def: Option<&Def>) -> Result<(), RuntimeError> {
        let plan = self.plan;
        for check in plan.checks_at(cx.function_name(), Site::At(cx.index)) {
            if check.placement != Placement::Post {
                continue;
            }
            // A call that returned nothing defines nothing to activate.
            let Some(def) = def else { continue };
            if let Some((class, detail)) = self.run(cx, Some(instr), check, def.origin)? {
                self.report(cx, check, class, detail);
            }
        }
        self.debug_check()
    }

    fn halted(&self) -> bool {
        self.halt
    }
}
