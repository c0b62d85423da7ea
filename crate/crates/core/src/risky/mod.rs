//! Risky-pointer identification: exposed raw pointers, unsafe-API sites,
//! taint-source classification and lifetime-aware taint propagation.

mod exposure;
pub(crate) mod facts;
mod taint;
mod unsafe_api;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::ir::Program;

pub use exposure::{classify_sources, find_exposed_raw_pointers};
pub use taint::propagate_taint;
pub use unsafe_api::{find_unsafe_api_sites, UnsafeApi, UnsafeApiSite};

pub use crate::reachability::resolve_indirect_callees;

/// A pointer value, identified by its function, name and first definition
/// (`None` for parameters).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PointerRef {
    pub function: String,
    pub value: String,
    pub def_site: Option<usize>,
}

impl PointerRef {
    pub fn new(function: &str, value: &str, def_site: Option<usize>) -> Self {
        PointerRef { function: function.to_string(), value: value.to_string(), def_site }
    }
}

impl fmt::Display for PointerRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:%{}", self.function, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum TaintClass {
    /// Refers to an object some smart pointer already owns (`as_raw`).
    T1,
    /// Refers to fresh memory (`raw_alloc`) or to nothing (`null`).
    T2,
}

pub type SourceClass = BTreeMap<PointerRef, TaintClass>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TaintedSet {
    pub members: BTreeSet<PointerRef>,
    pub owners: BTreeSet<PointerRef>,
}

/// Taint source → pointer set. Sources whose sets were merged map to equal
/// sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaintedSets {
    pub sets: BTreeMap<PointerRef, TaintedSet>,
}

impl TaintedSets {
    pub fn all_members(&self) -> BTreeSet<PointerRef> {
        self.sets.values().flat_map(|s| s.members.iter().cloned()).collect()
    }
}

impl Serialize for TaintedSets {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Entry<'a> {
            source: &'a PointerRef,
            members: &'a BTreeSet<PointerRef>,
            owners: &'a BTreeSet<PointerRef>,
        }
        s.collect_seq(
            self.sets.iter().map(|(source, set)| Entry { source, members: &set.members, owners: &set.owners }),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RiskSet {
    pub spatially_risky: BTreeSet<PointerRef>,
    pub temporally_risky: BTreeSet<PointerRef>,
    pub exposed_raw: BTreeSet<PointerRef>,
    pub unsafe_api_sites: Vec<UnsafeApiSite>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RiskError {
    #[error("exposed raw pointer {0} has no resolvable root")]
    UnresolvableRoot(PointerRef),
}

/// Combine the analyses into the risk classification.
pub fn build_risk_set(
    exposed: &BTreeSet<PointerRef>,
    tainted: &TaintedSets,
    api_sites: &[UnsafeApiSite],
) -> RiskSet {
    let mut spatially_risky = exposed.clone();
    spatially_risky.extend(api_sites.iter().filter_map(|s| s.pointer.clone()));
    RiskSet {
        spatially_risky,
        temporally_risky: tainted.all_members(),
        exposed_raw: exposed.clone(),
        unsafe_api_sites: api_sites.to_vec(),
    }
}

/// Convenience: run every analysis in this module over `p`.
pub fn analyze_risk(
    p: &Program,
    reachable: &BTreeSet<String>,
) -> Result<(RiskSet, SourceClass, TaintedSets), RiskError> {
    let exposed = find_exposed_raw_pointers(p, reachable);
    let classes = classify_sources(p, &exposed, reachable)?;
    let tainted = propagate_taint(p, &classes, reachable);
    let sites = find_unsafe_api_sites(p, reachable);
    Ok((build_risk_set(&exposed, &tainted, &sites), classes, tainted))
}
