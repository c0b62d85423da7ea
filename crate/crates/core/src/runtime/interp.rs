use std::collections::HashMap;

use crate::ir::{Instruction, Op, Operand, Program, ValueKind};

use super::memory::{Memory, HEAP_BASE};
use super::{Ptr, RuntimeError, Value, Violation, ViolationClass};

/// What the interpreter does with the instruction after the monitor's
/// pre-checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Proceed,
    /// A violation was reported: reads yield 0; writes, frees and container
    /// updates are skipped.
    Poison,
}

pub struct Frame {
    pub func: usize,
    pub env: HashMap<String, Value>,
}

/// A definition as seen by the monitor: the new value and the value it was
/// derived from (operand, loaded value, argument or returned value).
pub struct Def<'a> {
    pub name: &'a str,
    pub value: &'a Value,
    pub origin: Option<&'a Value>,
}

pub struct Ctx<'a> {
    pub program: &'a Program,
    pub func: usize,
    pub index: usize,
    pub frame: &'a Frame,
    pub mem: &'a Memory,
}

impl Ctx<'_> {
    pub fn function_name(&self) -> &str {
        &self.program.functions[self.func].name
    }

    pub fn int(&self, o: &Operand) -> Result<i64, RuntimeError> {
        match o {
            Operand::Int(n) => Ok(*n),
            Operand::Value(v) => match self.frame.env.get(v) {
                Some(Value::Int(n)) => Ok(*n),
                Some(Value::Ptr(p)) => Ok(p.addr),
                _ => Err(self.mismatch(format!("%{v} is not an integer"))),
            },
            Operand::Func(f) => Err(self.mismatch(format!("@{f} is not an integer"))),
        }
    }

    pub fn ptr(&self, name: &str) -> Result<Ptr, RuntimeError> {
        match self.frame.env.get(name) {
            Some(Value::Ptr(p)) => Ok(*p),
            _ => Err(self.mismatch(format!("%{name} is not a pointer"))),
        }
    }

    pub fn mismatch(&self, message: String) -> RuntimeError {
        RuntimeError::TypeMismatch { function: self.function_name().to_string(), index: self.index, message }
    }
}

pub trait Monitor {
    fn place(&mut self, mem: &mut Memory, size: i64) -> i64 {
        mem.bump(size)
    }
    fn released(&mut self, _mem: &Memory, _obj: usize) {}
    fn enter(&mut self, _cx: &Ctx, _params: &[Def]) -> Result<(), RuntimeError> {
        Ok(())
    }
    fn before(&mut self, _cx: &Ctx, _instr: &Instruction) -> Result<Gate, RuntimeError> {
        Ok(Gate::Proceed)
    }
    fn after(&mut self, _cx: &Ctx, _instr: &Instruction, _def: Option<&Def>) -> Result<(), RuntimeError> {
        Ok(())
    }
    /// Stop the whole execution after the current instruction.
    fn halted(&self) -> bool {
        false
    }
}

pub struct Interp<'p, M> {
    program: &'p Program,
    pub mem: Memory,
    pub monitor: M,
    /// Raw faults of the plain execution: unmapped, freed and null accesses,
    /// double and invalid frees.
    pub faults: Vec<Violation>,
    pub executed: u64,
    budget: u64,
    depth: usize,
    next_instance: u64,
    next_handle: u64,
}

const MAX_DEPTH: usize = 256;

enum Flow {
    Next,
    Jump(usize),
    Return(Option<Value>),
}

impl<'p, M: Monitor> Interp<'p, M> {
    pub fn new(program: &'p Program, monitor: M, budget: u64) -> Self {
        Interp {
            program,
            mem: Memory::new(),
            monitor,
            faults: Vec::new(),
            executed: 0,
            budget,
            depth: 0,
            next_instance: 1,
            next_handle: 1,
        }
    }

    fn instance(&mut self) -> u64 {
        self.next_instance += 1;
        self.next_instance - 1
    }

    fn handle(&mut self) -> u64 {
        self.next_handle += 1;
        self.next_handle - 1
    }

    /// Same referent, new identity; `fresh_handle` for new owners.
    fn rebind(&mut self, v: &Value, fresh_handle: bool) -> Value {
        match v {
            Value::Ptr(p) => {
                let handle = if fresh_handle { Some(self.handle()) } else { p.handle };
                Value::Ptr(Ptr { instance: self.instance(), handle, ..*p })
            }
            other => other.clone(),
        }
    }

    /// Run the first entry function with null/zero arguments.
    pub fn run_entry(&mut self) -> Result<(), RuntimeError> {
        let entry = self.program.entries().into_iter().next().unwrap_or_default();
        let fi = self
            .program
            .function_index(&entry)
            .ok_or_else(|| RuntimeError::Internal(format!("entry function `{entry}` not found")))?;
        let args = self.program.functions[fi]
            .params
            .iter()
            .map(|p| match p.kind {
                ValueKind::Owner | ValueKind::Raw => Value::Ptr(Ptr { instance: self.instance(), ..Ptr::NULL }),
                _ => Value::Int(0),
            })
            .collect::<Vec<_>>();
        self.call(fi, args)?;
        Ok(())
    }

    fn fault(&mut self, fi: usize, index: usize, class: ViolationClass, pointer: &str, detail: String) {
        self.faults.push(Violation {
            class,
            function: self.program.functions[fi].name.clone(),
            index,
            pointer: pointer.to_string(),
            detail,
        });
    }

    fn call(&mut self, fi: usize, args: Vec<Value>) -> Result<Option<Value>, RuntimeError> {
        if self.monitor.halted() {
            return Ok(None);
        }
        if self.depth >= MAX_DEPTH {
            return Err(RuntimeError::CallDepth);
        }
        self.depth += 1;
        let program = self.program;
        let f = &program.functions[fi];
        let mut frame = Frame { func: fi, env: HashMap::new() };
        let mut bound = Vec::new();
        // Arguments arrive as the same pointers, identity included.
        for (p, a) in f.params.iter().zip(&args) {
            frame.env.insert(p.name.clone(), a.clone());
            bound.push(a.clone());
        }
        let defs: Vec<Def> = f
            .params
            .iter()
            .zip(&bound)
            .zip(&args)
            .map(|((p, v), a)| Def { name: &p.name, value: v, origin: Some(a) })
            .collect();
        self.monitor.enter(&Ctx { program, func: fi, index: 0, frame: &frame, mem: &self.mem }, &defs)?;

        let mut pc = 0;
        let ret = loop {
            let Some(instr) = f.body.get(pc) else { break None };
            if self.executed >= self.budget {
                return Err(RuntimeError::StepBudget(self.budget));
            }
            self.executed += 1;
            let gate =
                self.monitor.before(&Ctx { program, func: fi, index: pc, frame: &frame, mem: &self.mem }, instr)?;
            let (flow, def) = self.exec(fi, pc, instr, &frame, gate)?;
            let def_ref = def.as_ref().map(|(value, origin)| Def {
                name: instr.result.as_deref().unwrap_or_default(),
                value,
                origin: origin.as_ref(),
            });
            if let Some((value, _)) = &def {
                frame.env.insert(instr.result.clone().unwrap_or_default(), value.clone());
            }
            self.monitor.after(
                &Ctx { program, func: fi, index: pc, frame: &frame, mem: &self.mem },
                instr,
                def_ref.as_ref(),
            )?;
            if self.monitor.halted() {
                break None;
            }
            match flow {
                Flow::Next => pc += 1,
                Flow::Jump(to) => pc = to,
                Flow::Return(v) => break v,
            }
        };
        self.depth -= 1;
        Ok(ret)
    }

    fn allocate(&mut self, size: i64, init: i64, vec_len: i64, owner: bool) -> Value {
        let size = size.max(0);
        let start = self.monitor.place(&mut self.mem, size);
        let obj = self.mem.place(start, size, vec_len);
        self.mem.init_cells(start, init.clamp(0, size));
        let handle = owner.then(|| self.handle());
        Value::Ptr(Ptr { addr: start, obj: Some(obj), instance: self.instance(), handle })
    }

    /// Check that `addr` is inside a live object; record a fault otherwise.
    fn accessible(&mut self, fi: usize, index: usize, name: &str, addr: i64) -> bool {
        if addr < HEAP_BASE {
            self.fault(fi, index, ViolationClass::Npd, name, format!("access to address {addr}"));
            return false;
        }
        if self.mem.live_at(addr).is_some() {
            return true;
        }
        let (class, what) = match self.mem.freed_at(addr) {
            Some(_) => (ViolationClass::Uaf, "freed"),
            None => (ViolationClass::Oob, "unmapped"),
        };
        self.fault(fi, index, class, name, format!("access to {what} address {addr}"));
        false
    }

    fn free(&mut self, fi: usize, index: usize, name: &str, addr: i64) {
        if addr < HEAP_BASE {
            self.fault(fi, index, ViolationClass::Npd, name, "free of null".into());
        } else if let Some(obj) = self.mem.live_starting_at(addr) {
            self.mem.free(obj);
            self.monitor.released(&self.mem, obj);
        } else if self.mem.freed_at(addr).is_some() {
            self.fault(fi, index, ViolationClass::Df, name, format!("double free of {addr}"));
        } else {
            self.fault(fi, index, ViolationClass::Oob, name, format!("free of non-object address {addr}"));
        }
    }

    #[allow(clippy::type_complexity)]
    fn exec(
        &mut self,
        fi: usize,
        index: usize,
        instr: &Instruction,
        frame: &Frame,
        gate: Gate,
    ) -> Result<(Flow, Option<(Value, Option<Value>)>), RuntimeError> {
        let program = self.program;
        let cx = Ctx { program, func: fi, index, frame, mem: &self.mem };
        let poisoned = gate == Gate::Poison;
        let def = |v: Value| Ok((Flow::Next, Some((v, None))));
        let derived = |v: Value, o: Value| Ok((Flow::Next, Some((v, Some(o)))));
        let nothing = Ok((Flow::Next, None));
        match &instr.op {
            Op::HeapAlloc { count } => {
                let n = cx.int(count)?;
                def(self.allocate(n, n, 0, true))
            }
            Op::HeapAllocUninit { count } => {
                let n = cx.int(count)?;
                def(self.allocate(n, 0, 0, true))
            }
            Op::RawAlloc { count } => {
                let n = cx.int(count)?;
                def(self.allocate(n, 0, 0, false))
            }
            Op::VecNew { capacity, len } => {
                let (c, l) = (cx.int(capacity)?, cx.int(len)?);
                def(self.allocate(c, l, l.clamp(0, c.max(0)), true))
            }
            Op::VecPush { vec } => {
                let p = cx.ptr(vec)?;
                if !poisoned && self.accessible(fi, index, vec, p.addr) {
                    if let Some(obj) = p.obj {
                        let at = self.mem.objects[obj].start + self.mem.objects[obj].vec_len;
                        if self.accessible(fi, index, vec, at) {
                            self.mem.write(at, 0);
                        }
                        self.mem.objects[obj].vec_len += 1;
                    }
                }
                nothing
            }
            Op::VecPop { vec } => {
                let p = cx.ptr(vec)?;
                if let (false, Some(obj)) = (poisoned, p.obj) {
                    let o = &mut self.mem.objects[obj];
                    o.vec_len = (o.vec_len - 1).max(0);
                }
                nothing
            }
            Op::SetLen { vec, len } => {
                let (p, n) = (cx.ptr(vec)?, cx.int(len)?);
                if let (false, Some(obj)) = (poisoned, p.obj) {
                    self.mem.objects[obj].vec_len = n;
                }
                nothing
            }
            Op::Unchecked { lhs, op, rhs } => {
                let a = cx.int(lhs)?;
                let b = match rhs {
                    Some(r) => cx.int(r)?,
                    None => 0,
                };
                def(Value::Int(op.apply(a, b)))
            }
            Op::AsRaw { src, .. } => {
                let o = Value::Ptr(cx.ptr(src)?);
                let v = match self.rebind(&o, false) {
                    Value::Ptr(p) => Value::Ptr(Ptr { handle: None, ..p }),
                    other => other,
                };
                derived(v, o)
            }
            Op::BoxFromRaw { src } | Op::Move { src } => {
                let o = Value::Ptr(cx.ptr(src)?);
                derived(self.rebind(&o, true), o)
            }
            Op::Gep { ptr, delta } => {
                let (p, d) = (cx.ptr(ptr)?, cx.int(delta)?);
                let o = Value::Ptr(p);
                let v = match self.rebind(&o, false) {
                    Value::Ptr(q) => Value::Ptr(Ptr { addr: q.addr.wrapping_add(d), ..q }),
                    other => other,
                };
                derived(v, o)
            }
            Op::Copy { src } => {
                let o = match src {
                    Operand::Value(v) => {
                        cx.frame.env.get(v).cloned().ok_or_else(|| cx.mismatch(format!("%{v} is undefined")))?
                    }
                    Operand::Int(n) => Value::Int(*n),
                    Operand::Func(f) => Value::Func(f.clone()),
                };
                if matches!(o, Value::Ptr(_)) {
                    derived(o.clone(), o)
                } else {
                    def(o)
                }
            }
            Op::StoreField { target, value } => {
                let p = cx.ptr(&target.object)?;
                let v = match value {
                    Operand::Value(n) => {
                        cx.frame.env.get(n).cloned().ok_or_else(|| cx.mismatch(format!("%{n} is undefined")))?
                    }
                    Operand::Int(n) => Value::Int(*n),
                    Operand::Func(f) => Value::Func(f.clone()),
                };
                if !poisoned && self.accessible(fi, index, &target.object, p.addr) {
                    if let Some(obj) = self.mem.live_at(p.addr) {
                        self.mem.objects[obj].fields.insert(target.field.clone(), v);
                    }
                }
                nothing
            }
            Op::LoadField { source, kind } => {
                let p = cx.ptr(&source.object)?;
                let mut loaded = None;
                if !poisoned && self.accessible(fi, index, &source.object, p.addr) {
                    if let Some(obj) = self.mem.live_at(p.addr) {
                        loaded = self.mem.objects[obj].fields.get(&source.field).cloned();
                    }
                }
                match loaded {
                    Some(o) => derived(o.clone(), o),
                    None => match kind {
                        ValueKind::Owner | ValueKind::Raw => {
                            def(Value::Ptr(Ptr { instance: self.instance(), ..Ptr::NULL }))
                        }
                        _ => def(Value::Int(0)),
                    },
                }
            }
            Op::Drop { owner } | Op::EndScope { owner } => {
                let p = cx.ptr(owner)?;
                if !poisoned {
                    self.free(fi, index, owner, p.addr);
                }
                nothing
            }
            Op::Forget { owner } => {
                cx.ptr(owner)?;
                nothing
            }
            Op::DerefRead { ptr } => {
                let p = cx.ptr(ptr)?;
                let v = if !poisoned && self.accessible(fi, index, ptr, p.addr) { self.mem.read(p.addr) } else { 0 };
                def(Value::Int(v))
            }
            Op::DerefWrite { ptr, value } => {
                let (p, v) = (cx.ptr(ptr)?, cx.int(value)?);
                if !poisoned && self.accessible(fi, index, ptr, p.addr) {
                    self.mem.write(p.addr, v);
                }
                nothing
            }
            Op::Null => def(Value::Ptr(Ptr { instance: self.instance(), ..Ptr::NULL })),
            Op::Call { callee, args } => {
                let g = program
                    .function_index(callee)
                    .ok_or_else(|| cx.mismatch(format!("call to undefined function `{callee}`")))?;
                let args = self.args(&cx, args)?;
                self.call_result(g, args)
            }
            Op::ICall { target, args, sig } => {
                let name = match cx.frame.env.get(target) {
                    Some(Value::Func(n)) => n.clone(),
                    _ => return Err(cx.mismatch(format!("%{target} is not a function"))),
                };
                let g = program
                    .function_index(&name)
                    .filter(|&g| program.functions[g].signature() == *sig)
                    .ok_or_else(|| cx.mismatch(format!("@{name} does not match {sig}")))?;
                let args = self.args(&cx, args)?;
                self.call_result(g, args)
            }
            Op::Ret { value } => {
                let v = match value {
                    Some(Operand::Value(n)) => Some(
                        cx.frame.env.get(n).cloned().ok_or_else(|| cx.mismatch(format!("%{n} is undefined")))?,
                    ),
                    Some(Operand::Int(n)) => Some(Value::Int(*n)),
                    Some(Operand::Func(f)) => Some(Value::Func(f.clone())),
                    None => None,
                };
                Ok((Flow::Return(v), None))
            }
            Op::Br { label } => {
                let f = &program.functions[fi];
                let to = f.label_index(label).ok_or_else(|| cx.mismatch(format!("unknown label {label}")))?;
                Ok((Flow::Jump(to), None))
            }
            Op::Cbr { cond, then_label, else_label } => {
                let c = cx.int(cond)?;
                let f = &program.functions[fi];
                let label = if c != 0 { then_label } else { else_label };
                let to = f.label_index(label).ok_or_else(|| cx.mismatch(format!("unknown label {label}")))?;
                Ok((Flow::Jump(to), None))
            }
        }
    }

    fn args(&self, cx: &Ctx, args: &[Operand]) -> Result<Vec<Value>, RuntimeError> {
        args.iter()
            .map(|a| match a {
                Operand::Value(n) => {
                    cx.frame.env.get(n).cloned().ok_or_else(|| cx.mismatch(format!("%{n} is undefined")))
                }
                Operand::Int(n) => Ok(Value::Int(*n)),
                Operand::Func(f) => Ok(Value::Func(f.clone())),
            })
            .collect()
    }

    #[allow(clippy::type_complexity)]
    fn call_result(
        &mut self,
        g: usize,
        args: Vec<Value>,
    ) -> Result<(Flow, Option<(Value, Option<Value>)>), RuntimeError> {
        Ok(match self.call(g, args)? {
            Some(r) => (Flow::Next, Some((r.clone(), Some(r)))),
            None => (Flow::Next, None),
        })
    }
}
