//! One pass/fail line per acceptance criterion.

mod common;

use std::process::ExitCode;

use common::criteria::{self, Outcome};

fn main() -> ExitCode {
    let entries = criteria::corpus();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("detection completeness", Box::new(|| criteria::detection(&entries))),
        ("baseline gap", Box::new(|| criteria::gap(&entries))),
        ("taint oracle equivalence", Box::new(|| criteria::taint_oracle(500))),
        ("uaf_cache fidelity", Box::new(|| criteria::listing(&entries))),
        ("selectivity", Box::new(|| criteria::selectivity(&entries))),
        ("instrumentation matrix", Box::new(criteria::matrix)),
        ("structural properties", Box::new(|| criteria::structural(&entries))),
    ];
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        match check() {
            Ok(msg) => println!("criterion {}: PASS {name}: {msg}", n + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {msg}", n + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
