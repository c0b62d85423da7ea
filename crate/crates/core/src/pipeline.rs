//! The analysis chain from a parsed program to its instrumentation plan.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::instrument::{build_plan, count_instrumented_sites, InstrumentError, InstrumentationPlan, SiteCounts};
use crate::ir::{validate_program, Diagnostic, Program};
use crate::metadata::{infer_owners, infer_spatial, mark_metadata_carriers, SpatialTemplate, TemporalTemplate};
use crate::reachability::{build_call_graph, compute_reachable_from, ReachabilityError};
use crate::risky::{analyze_risk, PointerRef, RiskError, RiskSet, SourceClass, TaintedSets};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{} validation error(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Reachability(#[from] ReachabilityError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub reachable: BTreeSet<String>,
    pub risk: RiskSet,
    #[serde(serialize_with = "sources_as_list")]
    pub sources: SourceClass,
    pub tainted: TaintedSets,
    #[serde(serialize_with = "entries")]
    pub spatial: BTreeMap<PointerRef, SpatialTemplate>,
    #[serde(serialize_with = "entries")]
    pub temporal: BTreeMap<PointerRef, TemporalTemplate>,
    pub carriers: BTreeSet<PointerRef>,
    pub plan: InstrumentationPlan,
    pub counts: SiteCounts,
}

fn sources_as_list<S: serde::Serializer>(m: &SourceClass, s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Entry<'a> {
        pointer: &'a PointerRef,
        class: crate::risky::TaintClass,
    }
    s.collect_seq(m.iter().map(|(pointer, &class)| Entry { pointer, class }))
}

/// JSON object keys must be strings, so pointer-keyed maps become lists.
fn entries<T: Serialize, S: serde::Serializer>(m: &BTreeMap<PointerRef, T>, s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Entry<'a, T> {
        pointer: &'a PointerRef,
        template: &'a T,
    }
    s.collect_seq(m.iter().map(|(pointer, template)| Entry { pointer, template }))
}

pub fn analyze(p: &Program) -> Result<Analysis, PipelineError> {
    let diags = validate_program(p);
    if !diags.is_empty() {
        return Err(PipelineError::Invalid(diags));
    }
    let graph = build_call_graph(p)?;
    let reachable = compute_reachable_from(&graph, &p.entries());
    let (risk, sources, tainted) = analyze_risk(p, &reachable)?;
    let spatial = infer_spatial(p, &reachable, &risk);
    let carriers = mark_metadata_carriers(&spatial, &risk);
    let temporal = infer_owners(&tainted);
    let plan = build_plan(p, &reachable, &risk, &spatial, &temporal, &carriers)?;
    let counts = count_instrumented_sites(&plan);
    Ok(Analysis { reachable, risk, sources, tainted, spatial, temporal, carriers, plan, counts })
}
