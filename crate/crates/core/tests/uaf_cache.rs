mod common;

use litersan::instrument::{apply_plan, InstrClass, Site};
use litersan::pipeline::analyze;
use litersan::runtime::{execute, RunOptions, ViolationClass};

use common::criteria;

fn entry() -> litersan::corpus::CorpusEntry {
    criteria::corpus().into_iter().find(|e| e.name == "uaf_cache").unwrap()
}

#[test]
fn listing_criterion() {
    criteria::listing(&criteria::corpus()).unwrap();
}

#[test]
fn token_is_not_tainted_and_its_dereference_is_free() {
    let e = entry();
    let a = analyze(&e.program).unwrap();
    assert!(!a.tainted.all_members().iter().any(|m| m.function == "main" && m.value == "token"));
    let classes: Vec<InstrClass> = a.plan.checks_at("main", Site::At(2)).iter().map(|c| c.class()).collect();
    assert!(classes.is_empty(), "{classes:?}");
}

#[test]
fn stale_dereference_carries_a_temporal_check() {
    let e = entry();
    let a = analyze(&e.program).unwrap();
    let classes: Vec<InstrClass> = a.plan.checks_at("main", Site::At(8)).iter().map(|c| c.class()).collect();
    assert_eq!(classes, vec![InstrClass::I5]);
    let scope_end: Vec<InstrClass> = a.plan.checks_at("main", Site::At(6)).iter().map(|c| c.class()).collect();
    assert_eq!(scope_end, vec![InstrClass::I5, InstrClass::I3]);
}

#[test]
fn strict_run_stops_at_the_stale_dereference() {
    let e = entry();
    let a = analyze(&e.program).unwrap();
    let r = execute(&apply_plan(&e.program, &a.plan), &RunOptions { strict: true, ..RunOptions::default() }).unwrap();
    assert_eq!(r.violations.len(), 1);
    assert_eq!((r.violations[0].class, r.violations[0].index), (ViolationClass::Uaf, 8));
    assert_eq!(r.violations[0].pointer, "stale_token");
}
