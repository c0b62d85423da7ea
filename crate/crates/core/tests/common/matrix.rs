//! One targeted program per non-empty cell of the selective instrumentation
//! table, with the exact classes expected at the cell's site.

use std::collections::BTreeSet;

use litersan::instrument::{InstrClass, Site};
use litersan::ir::{parse_program, Op, Program};
use litersan::pipeline::analyze;
use litersan::risky::PointerRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Spatial,
    Temporal,
    Carrier,
}

pub struct Cell {
    pub name: &'static str,
    pub role: Role,
    pub src: &'static str,
    pub index: usize,
    pub pointer: &'static str,
    /// Classes on `pointer` at the site, in firing order.
    pub expected: &'static [InstrClass],
}

/// `%v` is spatially risky through set_len only, so it is neither tainted
/// nor a carrier.
const SPATIAL_VEC: &str = "fn main() entry {
  %v = vec_new 8, 2
  api_set_len %v, 4 !unsafe
  %x = deref_read %v
  vec_push %v
  end_scope %v
  ret
}";

const SPATIAL_RAW: &str = "fn main() entry {
  %r = raw_alloc 4 !rawptr
  %q = gep %r, 1 !rawptr
  %x = deref_read %q !unsafe !rawptr
  ret
}";

/// `%e` and `%b` are tainted but neither exposed nor on a chain towards an
/// exposed pointer.
const TEMPORAL: &str = "fn main() entry {
  %a = heap_alloc 4
  %r = as_raw %a !rawptr
  %x = deref_read %r !unsafe !rawptr
  %e = gep %r, 1 !rawptr
  %b = box_from_raw %r !unsafe !rawptr
  %y = deref_read %b
  forget %a
  drop %b
  ret
}";

/// `%v` and `%g` relay metadata to the exposed `%r`.
const CARRIER: &str = "fn main() entry {
  %v = vec_new 8, 0
  vec_push %v
  vec_push %v
  %g = gep %v, 1
  %r = as_raw %g !rawptr
  %x = deref_read %r !unsafe !rawptr
  end_scope %v
  ret
}";

use InstrClass::*;

pub const CELLS: &[Cell] = &[
    Cell { name: "spatial/definition", role: Role::Spatial, src: SPATIAL_VEC, index: 0, pointer: "v", expected: &[I1] },
    // The gep also defines %q, hence the activation in front.
    Cell { name: "spatial/arithmetic", role: Role::Spatial, src: SPATIAL_RAW, index: 1, pointer: "q", expected: &[I1, I2, I4] },
    Cell { name: "spatial/container", role: Role::Spatial, src: SPATIAL_VEC, index: 1, pointer: "v", expected: &[I2] },
    Cell { name: "spatial/container-push", role: Role::Spatial, src: SPATIAL_VEC, index: 3, pointer: "v", expected: &[I2] },
    Cell { name: "spatial/dereference", role: Role::Spatial, src: SPATIAL_VEC, index: 2, pointer: "v", expected: &[I4] },
    Cell { name: "temporal/definition", role: Role::Temporal, src: TEMPORAL, index: 4, pointer: "b", expected: &[I1] },
    Cell { name: "temporal/dereference", role: Role::Temporal, src: TEMPORAL, index: 5, pointer: "b", expected: &[I5] },
    Cell { name: "temporal/deallocation", role: Role::Temporal, src: TEMPORAL, index: 7, pointer: "b", expected: &[I5, I3] },
    Cell { name: "temporal/forget", role: Role::Temporal, src: TEMPORAL, index: 6, pointer: "a", expected: &[I5, I3] },
    Cell { name: "carrier/definition", role: Role::Carrier, src: CARRIER, index: 0, pointer: "v", expected: &[I1] },
    // Defines %g as well; no bounds check since %g is not risky itself.
    Cell { name: "carrier/arithmetic", role: Role::Carrier, src: CARRIER, index: 3, pointer: "g", expected: &[I1, I2] },
    Cell { name: "carrier/container", role: Role::Carrier, src: CARRIER, index: 1, pointer: "v", expected: &[I2] },
];

/// Empty cells, checked on the same programs: nothing fires.
pub const EMPTY: &[Cell] = &[
    Cell { name: "spatial/deallocation", role: Role::Spatial, src: SPATIAL_VEC, index: 4, pointer: "v", expected: &[] },
    // Arithmetic on a pointer that is only temporally risky adds nothing
    // beyond the activation of its result.
    Cell { name: "temporal/arithmetic", role: Role::Temporal, src: TEMPORAL, index: 3, pointer: "e", expected: &[I1] },
];

pub fn cell(name: &str) -> &'static Cell {
    CELLS.iter().chain(EMPTY).find(|c| c.name == name).unwrap_or_else(|| panic!("no cell {name}"))
}

fn position(classes: &[InstrClass], c: InstrClass) -> Option<usize> {
    classes.iter().position(|&x| x == c)
}

/// Every check at every site honours I2 before I4 and I5 before I3 for the
/// same pointer.
pub fn orderings_hold(a: &litersan::pipeline::Analysis) -> Result<(), String> {
    for (f, site, _) in a.plan.iter() {
        let checks = a.plan.checks_at(f, site);
        let pointers: BTreeSet<&PointerRef> = checks.iter().map(|c| &c.pointer).collect();
        for p in pointers {
            let classes: Vec<InstrClass> = checks.iter().filter(|c| &c.pointer == p).map(|c| c.class()).collect();
            for (before, after) in [(I2, I4), (I5, I3)] {
                if let (Some(b), Some(x)) = (position(&classes, before), position(&classes, after)) {
                    if b > x {
                        return Err(format!("{f} {site:?}: {after} before {before} on {p}"));
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn check_cell(c: &Cell) -> Result<(), String> {
    let p = parse_program(c.src).map_err(|e| e.to_string())?;
    let a = analyze(&p).map_err(|e| e.to_string())?;
    let r = a
        .risk
        .spatially_risky
        .iter()
        .chain(a.risk.temporally_risky.iter())
        .chain(a.carriers.iter())
        .find(|r| r.value == c.pointer)
        .cloned()
        .ok_or_else(|| format!("%{} is not instrumented at all", c.pointer))?;
    let role_ok = match c.role {
        Role::Spatial => a.risk.spatially_risky.contains(&r),
        Role::Temporal => a.risk.temporally_risky.contains(&r) && !a.risk.spatially_risky.contains(&r),
        Role::Carrier => a.carriers.contains(&r) && !a.risk.spatially_risky.contains(&r),
    };
    if !role_ok {
        return Err(format!("%{} does not have the {:?} role", c.pointer, c.role));
    }
    let got: Vec<InstrClass> = a
        .plan
        .checks_at("main", Site::At(c.index))
        .iter()
        .filter(|k| k.pointer.value == c.pointer)
        .map(|k| k.class())
        .collect();
    if got != c.expected {
        return Err(format!("{}: expected {:?}, got {:?}", c.name, c.expected, got));
    }
    orderings_hold(&a)
}

/// (role, operation, class) triples of the non-empty cells.
pub fn table_cells() -> BTreeSet<(Role, &'static str, InstrClass)> {
    [
        (Role::Spatial, "definition", I1),
        (Role::Spatial, "arithmetic", I2),
        (Role::Spatial, "arithmetic", I4),
        (Role::Spatial, "container", I2),
        (Role::Spatial, "dereference", I4),
        (Role::Temporal, "definition", I1),
        (Role::Temporal, "dereference", I5),
        (Role::Temporal, "deallocation", I5),
        (Role::Temporal, "deallocation", I3),
        (Role::Carrier, "definition", I1),
        (Role::Carrier, "arithmetic", I2),
        (Role::Carrier, "container", I2),
    ]
    .into()
}

fn operation(op: &Op) -> &'static str {
    match op {
        Op::Gep { .. } => "arithmetic",
        Op::VecPush { .. } | Op::VecPop { .. } | Op::SetLen { .. } => "container",
        Op::DerefRead { .. } | Op::DerefWrite { .. } => "dereference",
        Op::Drop { .. } | Op::Forget { .. } | Op::EndScope { .. } => "deallocation",
        _ => "definition",
    }
}

/// Cells a program's plan exercises, by the role each instrumented pointer
/// holds. Activations count as definitions wherever they sit.
pub fn exercised_cells(p: &Program) -> BTreeSet<(Role, &'static str, InstrClass)> {
    let a = analyze(p).expect("analysis");
    let mut out = BTreeSet::new();
    for (f, site, check) in a.plan.iter() {
        let r = &check.pointer;
        let op = match (site, check.class()) {
            (_, I1) | (Site::Entry, _) => "definition",
            (Site::At(i), _) => operation(&p.function(f).unwrap().body[i].op),
        };
        let roles = [
            (Role::Spatial, a.risk.spatially_risky.contains(r)),
            (Role::Temporal, a.risk.temporally_risky.contains(r)),
            (Role::Carrier, a.carriers.contains(r)),
        ];
        for (role, has) in roles {
            if has && table_cells().contains(&(role, op, check.class())) {
                out.insert((role, op, check.class()));
            }
        }
    }
    out
}
