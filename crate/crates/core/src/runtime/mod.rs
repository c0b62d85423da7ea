//! Interpreter for the mini-IR and the metadata-based checker that runs the
//! I1–I5 plan.

mod interp;
mod litersan;
pub mod memory;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::instrument::InstrumentedProgram;
use crate::ir::Program;

pub use interp::{Ctx, Def, Frame, Gate, Interp, Monitor};
pub use litersan::{LitersanMonitor, MetadataStore};
pub use memory::{Memory, HEAP_BASE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ptr {
    pub addr: i64,
    /// Object the pointer was derived from; `None` for null.
    pub obj: Option<usize>,
    /// Unique per definition; metadata is keyed by it.
    pub instance: u64,
    /// Owner identity: fresh at allocations, `box_from_raw` and `move`,
    /// shared by copies.
    pub handle: Option<u64>,
}

impl Ptr {
    pub const NULL: Ptr = Ptr { addr: 0, obj: None, instance: 0, handle: None };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Ptr(Ptr),
    Func(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
pub enum ViolationClass {
    #[serde(rename = "OOB")]
    Oob,
    #[serde(rename = "UBI")]
    Ubi,
    #[serde(rename = "UAF")]
    Uaf,
    #[serde(rename = "DF")]
    Df,
    #[serde(rename = "NPD")]
    Npd,
}

impl ViolationClass {
    pub const ALL: [ViolationClass; 5] =
        [ViolationClass::Oob, ViolationClass::Ubi, ViolationClass::Uaf, ViolationClass::Df, ViolationClass::Npd];

    pub fn name(self) -> &'static str {
        match self {
            ViolationClass::Oob => "OOB",
            ViolationClass::Ubi => "UBI",
            ViolationClass::Uaf => "UAF",
            ViolationClass::Df => "DF",
            ViolationClass::Npd => "NPD",
        }
    }
}

impl fmt::Display for ViolationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub class: ViolationClass,
    pub function: String,
    pub index: usize,
    pub pointer: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}:{} (%{}): {}", self.class, self.function, self.index, self.pointer, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Litersan,
    Asan,
    None,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Litersan => "litersan",
            Mode::Asan => "asan",
            Mode::None => "none",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExecutionReport {
    pub schema: u32,
    pub mode: Mode,
    pub violations: Vec<Violation>,
    /// Faults the plain interpreter hit on operations no check stopped.
    pub faults: Vec<Violation>,
    pub executed_instructions: u64,
    /// Checks fired, by class (`I1`..`I5` for litersan; `alloc`, `access`,
    /// `free` for asan).
    pub check_hits: BTreeMap<String, u64>,
}

impl ExecutionReport {
    /// 0 clean, 1 violations or faults found.
    pub fn exit_code(&self) -> i32 {
        if self.violations.is_empty() && self.faults.is_empty() {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("step budget of {0} instructions exceeded")]
    StepBudget(u64),
    #[error("call depth exceeded")]
    CallDepth,
    #[error("fn {function} instruction {index}: {message}")]
    TypeMismatch { function: String, index: usize, message: String },
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub budget: u64,
    /// Stop at the first violation.
    pub strict: bool,
    /// Check dual-map consistency and offset freshness after every step.
    pub debug: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { budget: 1_000_000, strict: false, debug: false }
    }
}

struct Plain;

impl Monitor for Plain {}

/// Uninstrumented execution; only raw faults are reported.
pub fn execute_plain(p: &Program, opts: &RunOptions) -> Result<ExecutionReport, RuntimeError> {
    let mut it = Interp::new(p, Plain, opts.budget);
    it.run_entry()?;
    Ok(ExecutionReport {
        schema: 1,
        mode: Mode::None,
        violations: Vec::new(),
        faults: it.faults,
        executed_instructions: it.executed,
        check_hits: BTreeMap::new(),
    })
}

/// Run an instrumented program under the metadata checker.
pub fn execute(ip: &InstrumentedProgram, opts: &RunOptions) -> Result<ExecutionReport, RuntimeError> {
    let monitor = LitersanMonitor::new(&ip.plan, opts.strict, opts.debug);
    let mut it = Interp::new(&ip.program, monitor, opts.budget);
    it.run_entry()?;
    let m = it.monitor;
    Ok(ExecutionReport {
        schema: 1,
        mode: Mode::Litersan,
        violations: m.violations,
        faults: it.faults,
        executed_instructions: it.executed,
        check_hits: m.hits.into_iter().map(|(c, n)| (c.to_string(), n)).collect(),
    })
}
