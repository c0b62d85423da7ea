mod common;

use common::matrix::{cell, check_cell};

fn check(name: &str) {
    check_cell(cell(name)).unwrap();
}

#[test]
fn spatial_definition_activates() {
    check("spatial/definition");
}

#[test]
fn spatial_arithmetic_updates_before_checking() {
    check("spatial/arithmetic");
}

#[test]
fn spatial_container_modifier_updates() {
    check("spatial/container");
    check("spatial/container-push");
}

#[test]
fn spatial_dereference_checks_bounds_only() {
    check("spatial/dereference");
}

#[test]
fn temporal_definition_activates() {
    check("temporal/definition");
}

#[test]
fn temporal_dereference_checks_liveness_only() {
    check("temporal/dereference");
}

#[test]
fn temporal_deallocation_checks_before_deactivating() {
    check("temporal/deallocation");
    check("temporal/forget");
}

#[test]
fn carrier_definition_activates() {
    check("carrier/definition");
}

#[test]
fn carrier_arithmetic_updates_without_a_check() {
    check("carrier/arithmetic");
}

#[test]
fn carrier_container_modifier_updates() {
    check("carrier/container");
}

#[test]
fn empty_cells_stay_empty() {
    check("spatial/deallocation");
    check("temporal/arithmetic");
}
