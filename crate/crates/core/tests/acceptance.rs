//! One test per acceptance criterion; each prints its PASS/FAIL line.

use std::io::Write;

use smaplab::acceptance;

fn check(id: u32) {
    let r = acceptance::run(id);
    // written to the handle directly so the line survives output capture
    let _ = writeln!(std::io::stdout().lock(), "{r}");
    assert!(r.passed, "{r}");
}

#[test]
fn c01_conservation() {
    check(1);
}

#[test]
fn c02_helical_convergence() {
    check(2);
}

#[test]
fn c03_gauge_identities() {
    check(3);
}

#[test]
fn c04_caloric_condition() {
    check(4);
}

#[test]
fn c05_integral_representation() {
    check(5);
}

#[test]
fn c06_modified_schrodinger() {
    check(6);
}

#[test]
fn c07_gauge_covariance() {
    check(7);
}

#[test]
fn c08_derivative_mass() {
    check(8);
}

#[test]
fn c09_linear_probes() {
    check(9);
}

#[test]
fn c10_heat_decay() {
    check(10);
}

#[test]
fn c11_lipschitz() {
    check(11);
}

#[test]
fn c12_frequency_envelopes() {
    check(12);
}
