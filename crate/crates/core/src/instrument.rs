//! Selective instrumentation: which of I1–I5 fire where.
//!
//! | pointer            | definition | arithmetic | container modifier | dereference | deallocation |
//! |--------------------|------------|------------|--------------------|-------------|--------------|
//! | spatially risky    | I1         | I2, I4     | I2                 | I4          |              |
//! | temporally risky   | I1         |            |                    | I5          | I5, I3       |
//! | metadata-carrying  | I1         | I2         | I2                 |             |              |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::ir::{print, Op, Operand, Program};
use crate::metadata::{def_binding, Bound, DefBinding, SpatialTemplate, TemporalTemplate};
use crate::risky::facts::{DefSite, Facts};
use crate::risky::{PointerRef, RiskSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum InstrClass {
    I1,
    I2,
    I3,
    I4,
    I5,
}

impl InstrClass {
    pub const ALL: [InstrClass; 5] = [InstrClass::I1, InstrClass::I2, InstrClass::I3, InstrClass::I4, InstrClass::I5];
}

impl fmt::Display for InstrClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            InstrClass::I1 => 1,
            InstrClass::I2 => 2,
            InstrClass::I3 => 3,
            InstrClass::I4 => 4,
            InstrClass::I5 => 5,
        };
        write!(f, "I{n}")
    }
}

/// Function entry (parameter activation) or an instruction index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Entry,
    At(usize),
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Entry => write!(f, "entry"),
            Site::At(i) => write!(f, "{i}"),
        }
    }
}

// Serialized as a string so it can key a JSON object.
impl Serialize for Site {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialBinding {
    Root { capacity: Bound, init_len: Bound },
    View { count: Bound },
    Inherit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TemporalBinding {
    pub source: PointerRef,
    pub owner: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Update {
    Arith { delta: i64 },
    ArithDynamic { delta: String },
    Push,
    Pop,
    SetLen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Read,
    Write,
    Arith,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Activate { spatial: Option<SpatialBinding>, temporal: Option<TemporalBinding> },
    SpatialUpdate(Update),
    Deactivate { no_free: bool },
    SpatialCheck(Access),
    TemporalCheck { dealloc: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub pointer: PointerRef,
    pub placement: Placement,
    pub payload: Payload,
}

impl Check {
    pub fn class(&self) -> InstrClass {
        match self.payload {
            Payload::Activate { .. } => InstrClass::I1,
            Payload::SpatialUpdate(_) => InstrClass::I2,
            Payload::Deactivate { .. } => InstrClass::I3,
            Payload::SpatialCheck(_) => InstrClass::I4,
            Payload::TemporalCheck { .. } => InstrClass::I5,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} %{}", self.class().to_string().to_lowercase(), self.pointer.value)?;
        match &self.payload {
            Payload::Activate { spatial, temporal } => {
                match spatial {
                    Some(SpatialBinding::Root { capacity, init_len }) => {
                        write!(f, " root(cap={capacity}, init={init_len})")?
                    }
                    Some(SpatialBinding::View { count }) => write!(f, " view(count={count})")?,
                    Some(SpatialBinding::Inherit) => f.write_str(" inherit")?,
                    None => {}
                }
                if let Some(t) = temporal {
                    write!(f, " temporal(src={}{})", t.source, if t.owner { ", owner" } else { "" })?;
                }
                Ok(())
            }
            Payload::SpatialUpdate(u) => match u {
                Update::Arith { delta } => write!(f, " arith({delta})"),
                Update::ArithDynamic { delta } => write!(f, " arith(%{delta})"),
                Update::Push => f.write_str(" push"),
                Update::Pop => f.write_str(" pop"),
                Update::SetLen => f.write_str(" set_len"),
            },
            Payload::Deactivate { no_free } => f.write_str(if *no_free { " no_free" } else { "" }),
            Payload::SpatialCheck(a) => f.write_str(match a {
                Access::Read => " read",
                Access::Write => " write",
                Access::Arith => " arith",
            }),
            Payload::TemporalCheck { dealloc } => f.write_str(if *dealloc { " dealloc" } else { " deref" }),
        }
    }
}

/// Function name → site → checks in firing order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct InstrumentationPlan {
    pub functions: BTreeMap<String, BTreeMap<Site, Vec<Check>>>,
}

impl InstrumentationPlan {
    pub fn checks_at(&self, function: &str, site: Site) -> &[Check] {
        self.functions.get(function).and_then(|m| m.get(&site)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.functions.values().all(|m| m.values().all(Vec::is_empty))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Site, &Check)> {
        self.functions
            .iter()
            .flat_map(|(f, m)| m.iter().flat_map(move |(s, cs)| cs.iter().map(move |c| (f.as_str(), *s, c))))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("{0} is spatially risky or metadata-carrying but has no spatial template")]
    MissingSpatial(PointerRef),
    #[error("{0} is temporally risky but belongs to no temporal template")]
    MissingTemporal(PointerRef),
}

struct Roles<'a> {
    spatial: &'a BTreeSet<PointerRef>,
    carriers: &'a BTreeSet<PointerRef>,
    source_of: BTreeMap<&'a PointerRef, (&'a PointerRef, bool)>,
}

impl Roles<'_> {
    /// Whether `u` carries at least the metadata `v` needs.
    fn covers(&self, u: &PointerRef, v: &PointerRef) -> bool {
        let spatial = !(self.s(v) || self.c(v)) || self.s(u) || self.c(u);
        let temporal = match (self.source_of.get(v), self.source_of.get(u)) {
            (None, _) => true,
            (Some((sv, ov)), Some((su, ou))) => sv == su && ov == ou,
            (Some(_), None) => false,
        };
        spatial && temporal
    }

    fn s(&self, r: &PointerRef) -> bool {
        self.spatial.contains(r)
    }
    fn c(&self, r: &PointerRef) -> bool {
        self.carriers.contains(r)
    }
    fn t(&self, r: &PointerRef) -> bool {
        self.source_of.contains_key(r)
    }
}

fn activation(roles: &Roles, r: &PointerRef, op: Option<&Op>) -> Option<Check> {
    let spatial = (roles.s(r) || roles.c(r)).then(|| match op.map(def_binding) {
        Some(DefBinding::Root { capacity, init_len }) => SpatialBinding::Root { capacity, init_len },
        Some(DefBinding::View { count }) => SpatialBinding::View { count },
        _ => SpatialBinding::Inherit,
    });
    let temporal = roles
        .source_of
        .get(r)
        .map(|&(source, owner)| TemporalBinding { source: source.clone(), owner });
    if spatial.is_none() && temporal.is_none() {
        return None;
    }
    Some(Check { pointer: r.clone(), placement: Placement::Post, payload: Payload::Activate { spatial, temporal } })
}

/// Parameters, call results, copies and field loads hand over an existing
/// pointer rather than derive a new one; the runtime keeps its identity and
/// so its metadata. Activation there is redundant when every value that can
/// arrive is already tracked with the same roles.
fn transfer_is_tracked(facts: &Facts, roles: &Roles, v: usize, def: DefSite) -> bool {
    let is_transfer = match facts.def_instruction(v, def).map(|i| &i.op) {
        None => true,
        Some(Op::Copy { .. } | Op::LoadField { .. } | Op::Call { .. } | Op::ICall { .. }) => true,
        Some(_) => false,
    };
    if !is_transfer {
        return false;
    }
    let mut origins = Vec::new();
    for e in facts.def_preds(v, def) {
        if facts.is_field(e.src) {
            origins.extend(facts.pred[e.src].iter().map(|&k| facts.edges[k].src));
        } else {
            origins.push(e.src);
        }
    }
    // A load that can read back its own earlier value may also read the
    // field before anything else was stored: that null needs activating.
    let r = facts.pointer_ref(v);
    !origins.is_empty()
        && origins.iter().all(|&u| u != v && !facts.is_field(u) && roles.covers(&facts.pointer_ref(u), &r))
}

/// Assign classes per the table in the module docs. Within a site, checks
/// are ordered I5 before I4 and I5 before I3 (pre), and I1, I2, I4 (post).
pub fn build_plan(
    p: &Program,
    reachable: &BTreeSet<String>,
    risk: &RiskSet,
    spatial: &BTreeMap<PointerRef, SpatialTemplate>,
    temporal: &BTreeMap<PointerRef, TemporalTemplate>,
    carriers: &BTreeSet<PointerRef>,
) -> Result<InstrumentationPlan, InstrumentError> {
    if let Some(r) = risk.spatially_risky.iter().find(|r| !spatial.contains_key(*r)) {
        return Err(InstrumentError::MissingSpatial(r.clone()));
    }
    let mut source_of = BTreeMap::new();
    for t in temporal.values() {
        for m in &t.pointer_set {
            source_of.entry(m).or_insert((&t.source, t.owner_set.contains(m)));
        }
    }
    if let Some(r) = risk.temporally_risky.iter().find(|r| !source_of.contains_key(r)) {
        return Err(InstrumentError::MissingTemporal(r.clone()));
    }
    let roles = Roles { spatial: &risk.spatially_risky, carriers, source_of };

    let facts = Facts::build(p, reachable);
    let mut plan = InstrumentationPlan::default();
    for &fi in &facts.funcs {
        let f = facts.func(fi);
        let mut sites: BTreeMap<Site, Vec<Check>> = BTreeMap::new();
        let pref = |name: &str| facts.value_id(fi, name).map(|v| facts.pointer_ref(v));

        let entry: Vec<Check> = f
            .params
            .iter()
            .filter_map(|prm| facts.value_id(fi, &prm.name))
            .filter(|&v| !transfer_is_tracked(&facts, &roles, v, DefSite::Entry))
            .filter_map(|v| activation(&roles, &facts.pointer_ref(v), None))
            .collect();
        if !entry.is_empty() {
            sites.insert(Site::Entry, entry);
        }

        for (i, instr) in f.body.iter().enumerate() {
            let mut checks = Vec::new();
            let pre = |r: &PointerRef, payload| Check { pointer: r.clone(), placement: Placement::Pre, payload };
            match &instr.op {
                Op::DerefRead { ptr } | Op::DerefWrite { ptr, .. } => {
                    if let Some(r) = pref(ptr) {
                        if roles.t(&r) {
                            checks.push(pre(&r, Payload::TemporalCheck { dealloc: false }));
                        }
                        if roles.s(&r) {
                            let access =
                                if matches!(instr.op, Op::DerefRead { .. }) { Access::Read } else { Access::Write };
                            checks.push(pre(&r, Payload::SpatialCheck(access)));
                        }
                    }
                }
                Op::Drop { owner } | Op::Forget { owner } | Op::EndScope { owner } => {
                    if let Some(r) = pref(owner).filter(|r| roles.t(r)) {
                        checks.push(pre(&r, Payload::TemporalCheck { dealloc: true }));
                        let no_free = matches!(instr.op, Op::Forget { .. });
                        checks.push(pre(&r, Payload::Deactivate { no_free }));
                    }
                }
                Op::VecPush { vec } | Op::VecPop { vec } | Op::SetLen { vec, .. } => {
                    if let Some(r) = pref(vec).filter(|r| roles.s(r) || roles.c(r)) {
                        let u = match instr.op {
                            Op::VecPush { .. } => Update::Push,
                            Op::VecPop { .. } => Update::Pop,
                            _ => Update::SetLen,
                        };
                        checks.push(pre(&r, Payload::SpatialUpdate(u)));
                    }
                }
                _ => {}
            }
            if let Some(r) = instr.result.as_deref().and_then(pref) {
                let v = facts.value_id(fi, &r.value).expect("pref resolved the value");
                if !transfer_is_tracked(&facts, &roles, v, DefSite::At(i)) {
                    checks.extend(activation(&roles, &r, Some(&instr.op)));
                }
                if let Op::Gep { delta, .. } = &instr.op {
                    let post = |payload| Check { pointer: r.clone(), placement: Placement::Post, payload };
                    if roles.s(&r) || roles.c(&r) {
                        let u = match delta {
                            Operand::Int(n) => Update::Arith { delta: *n },
                            Operand::Value(v) => Update::ArithDynamic { delta: v.clone() },
                            Operand::Func(f) => Update::ArithDynamic { delta: f.clone() },
                        };
                        checks.push(post(Payload::SpatialUpdate(u)));
                    }
                    if roles.s(&r) {
                        checks.push(post(Payload::SpatialCheck(Access::Arith)));
                    }
                }
            }
            if !checks.is_empty() {
                sites.insert(Site::At(i), checks);
            }
        }
        if !sites.is_empty() {
            plan.functions.insert(f.name.clone(), sites);
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentedProgram {
    pub program: Program,
    pub plan: InstrumentationPlan,
}

pub fn apply_plan(p: &Program, plan: &InstrumentationPlan) -> InstrumentedProgram {
    InstrumentedProgram { program: p.clone(), plan: plan.clone() }
}

impl InstrumentedProgram {
    pub fn strip(&self) -> Program {
        self.program.clone()
    }

    /// `.lrs` text with `#i1`..`#i5` pseudo-instruction lines interleaved.
    pub fn print(&self) -> String {
        self.program
            .functions
            .iter()
            .map(|f| {
                let lines = |site: Site, placement: Placement| -> Vec<String> {
                    self.plan
                        .checks_at(&f.name, site)
                        .iter()
                        .filter(|c| c.placement == placement)
                        .map(|c| c.to_string())
                        .collect()
                };
                print::function_with(
                    f,
                    &|i| match i {
                        None => lines(Site::Entry, Placement::Post),
                        Some(i) => lines(Site::At(i), Placement::Pre),
                    },
                    &|i| lines(Site::At(i), Placement::Post),
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Drop the pseudo-instruction lines from instrumented text.
pub fn strip_text(text: &str) -> String {
    text.lines().filter(|l| !l.trim_start().starts_with("#i")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SiteCounts {
    pub by_class: BTreeMap<InstrClass, usize>,
    /// Number of checks.
    pub total: usize,
    /// Number of distinct sites carrying at least one check.
    pub sites: usize,
}

pub fn count_instrumented_sites(plan: &InstrumentationPlan) -> SiteCounts {
    let mut c = SiteCounts::default();
    for class in InstrClass::ALL {
        c.by_class.insert(class, 0);
    }
    for m in plan.functions.values() {
        for checks in m.values().filter(|cs| !cs.is_empty()) {
            c.sites += 1;
            for check in checks {
                *c.by_class.entry(check.class()).or_default() += 1;
                c.total += 1;
            }
        }
    }
    c
}
