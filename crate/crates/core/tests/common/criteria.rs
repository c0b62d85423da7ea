//! The acceptance checks. Each returns a one-line summary on success and the
//! first discrepancy otherwise.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use litersan::asan::AsanConfig;
use litersan::corpus::{compare, default_dir, load_dir, ComparisonReport, CorpusEntry, MECHANISM_TAG, TABLE_GAP_TAG};
use litersan::gen::generate;
use litersan::instrument::{apply_plan, Site};
use litersan::ir::{parse_program, print_program, Op, Program};
use litersan::pipeline::analyze;
use litersan::reachability::{build_call_graph, compute_reachable_from};
use litersan::risky::analyze_risk;
use litersan::runtime::{execute, RunOptions, ViolationClass};

use super::matrix::{check_cell, CELLS};
use super::{bfs_reachable, call_graph_source, oracle_taint_closure, owners_of};

pub type Outcome = Result<String, String>;

pub fn corpus() -> Vec<CorpusEntry> {
    load_dir(&default_dir()).expect("corpus loads")
}

fn debug_opts() -> RunOptions {
    RunOptions { debug: true, ..RunOptions::default() }
}

pub fn run_corpus(entries: &[CorpusEntry]) -> Result<ComparisonReport, String> {
    compare(entries, AsanConfig::default(), &debug_opts()).map_err(|e| e.to_string())
}

/// Detection completeness.
pub fn detection(entries: &[CorpusEntry]) -> Outcome {
    let start = Instant::now();
    let report = run_corpus(entries)?;
    let elapsed = start.elapsed();
    for r in &report.entries {
        if !r.litersan.matched {
            return Err(format!("{}: {}", r.name, r.litersan.diff().join("; ")));
        }
        if r.safe && !r.litersan.violations.is_empty() {
            return Err(format!("{}: safe program reports violations", r.name));
        }
    }
    let safe = report.entries.iter().filter(|r| r.safe).count();
    if safe == 0 {
        return Err("no safe programs in the corpus".into());
    }
    let classes: BTreeSet<ViolationClass> =
        report.entries.iter().flat_map(|r| r.litersan.violations.iter().map(|v| v.class)).collect();
    if classes.len() != 5 {
        return Err(format!("corpus covers only {classes:?}"));
    }
    if elapsed >= Duration::from_secs(5) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!("{} programs ({} safe), all five classes, {:?}", report.entries.len(), safe, elapsed))
}

/// Programs the baseline misses and litersan catches.
pub fn gap(entries: &[CorpusEntry]) -> Outcome {
    let report = run_corpus(entries)?;
    let missed: Vec<_> = report
        .entries
        .iter()
        .filter(|r| !r.safe && r.asan.violations.is_empty() && r.litersan.matched && !r.litersan.violations.is_empty())
        .collect();
    let tagged = |t: &str| -> BTreeSet<&str> {
        report.entries.iter().filter(|r| r.tags.iter().any(|x| x == t)).map(|r| r.name.as_str()).collect()
    };
    let table = tagged(TABLE_GAP_TAG);
    let mechanism = tagged(MECHANISM_TAG);
    let missed_names: BTreeSet<&str> = missed.iter().map(|r| r.name.as_str()).collect();
    if table.len() != 4 {
        return Err(format!("{} table-gap programs, expected 4", table.len()));
    }
    let gap_only: BTreeSet<&str> = missed_names.difference(&mechanism).copied().collect();
    if gap_only != table {
        return Err(format!("baseline misses {gap_only:?}, tagged {table:?}"));
    }
    let mut counts = [0usize; 3];
    for r in missed.iter().filter(|r| table.contains(r.name.as_str())) {
        let classes = r.litersan.classes();
        if classes.len() != 1 {
            return Err(format!("{}: mixed classes {classes:?}", r.name));
        }
        match classes.first() {
            Some(ViolationClass::Oob) => counts[0] += 1,
            Some(ViolationClass::Ubi) => counts[1] += 1,
            Some(ViolationClass::Uaf) => counts[2] += 1,
            other => return Err(format!("{}: unexpected class {other:?}", r.name)),
        }
    }
    if counts != [2, 1, 1] {
        return Err(format!("OOB/UBI/UAF split is {counts:?}"));
    }
    for demo in ["quarantine_uaf", "redzone_bypass"] {
        if !mechanism.contains(demo) || !missed_names.contains(demo) {
            return Err(format!("{demo} does not demonstrate a baseline miss"));
        }
    }
    let show = |s: &BTreeSet<&str>| s.iter().copied().collect::<Vec<_>>().join(", ");
    Ok(format!("gap {} (2 OOB, 1 UBI, 1 UAF); mechanisms {}", show(&table), show(&mechanism)))
}

pub fn has_loop(p: &Program) -> bool {
    p.functions.iter().any(|f| (0..f.body.len()).any(|i| f.successors(i).iter().any(|&s| s <= i)))
}

pub fn has_icall(p: &Program) -> bool {
    p.functions.iter().flat_map(|f| &f.body).any(|i| matches!(i.op, Op::ICall { .. }))
}

/// Taint propagation against the fixed-point oracle on one generated program.
pub fn taint_matches(seed: u64, size: usize) -> Result<(), String> {
    let p = generate(seed, size);
    let reach = compute_reachable_from(&build_call_graph(&p).map_err(|e| e.to_string())?, &p.entries());
    let (_, sources, tainted) = analyze_risk(&p, &reach).map_err(|e| format!("seed {seed}: {e}"))?;
    let oracle = oracle_taint_closure(&p, &reach, &sources);
    let got: Vec<_> = tainted.sets.iter().map(|(s, t)| (s.clone(), t.members.clone())).collect();
    let want: Vec<_> = oracle.into_iter().collect();
    if got != want {
        return Err(format!("seed {seed} size {size}: propagation {got:?} vs oracle {want:?}"));
    }
    for (s, t) in &tainted.sets {
        if t.owners != owners_of(&p, &t.members) {
            return Err(format!("seed {seed} size {size}: owners of {s} differ"));
        }
    }
    Ok(())
}

pub fn taint_oracle(programs: u64) -> Outcome {
    let start = Instant::now();
    let (mut loops, mut icalls, mut nonempty) = (0, 0, 0);
    for seed in 0..programs {
        let size = 10 + (seed as usize * 7) % 31;
        taint_matches(seed, size)?;
        let p = generate(seed, size);
        loops += has_loop(&p) as usize;
        icalls += has_icall(&p) as usize;
        let reach = compute_reachable_from(&build_call_graph(&p).unwrap(), &p.entries());
        nonempty += !analyze_risk(&p, &reach).unwrap().2.sets.is_empty() as usize;
    }
    let elapsed = start.elapsed();
    if loops == 0 || icalls == 0 {
        return Err(format!("generator produced {loops} programs with loops, {icalls} with icalls"));
    }
    if elapsed >= Duration::from_secs(60) {
        return Err(format!("took {elapsed:?}"));
    }
    Ok(format!(
        "{programs} programs agree ({loops} with loops, {icalls} with icalls, {nonempty} with taint), {elapsed:?}"
    ))
}

/// Names as written in the source listing: numbered temporaries are
/// compiler artifacts, not variables.
fn variable_view<'a>(refs: impl Iterator<Item = &'a litersan::risky::PointerRef>) -> BTreeSet<String> {
    refs.filter(|r| !r.value.chars().all(|c| c.is_ascii_digit())).map(|r| r.value.clone()).collect()
}

pub fn listing(entries: &[CorpusEntry]) -> Outcome {
    let e = entries.iter().find(|e| e.name == "uaf_cache").ok_or("uaf_cache missing")?;
    let a = analyze(&e.program).map_err(|e| e.to_string())?;
    let members = a.tainted.all_members();
    let tainted = variable_view(members.iter());
    let want: BTreeSet<String> = ["self.ptr", "local_token", "stale_token"].map(String::from).into();
    if tainted != want {
        return Err(format!("tainted set {tainted:?}"));
    }
    if members.iter().any(|m| m.function == "main" && m.value == "token") {
        return Err("token is tainted".into());
    }
    let owners: BTreeSet<String> = variable_view(a.temporal.values().flat_map(|t| t.owner_set.iter()));
    let want: BTreeSet<String> = ["local_token", "stale_token"].map(String::from).into();
    if owners != want {
        return Err(format!("owner set {owners:?}"));
    }
    let main = e.program.function("main").unwrap();
    let token_deref = main
        .body
        .iter()
        .position(|i| i.op.deref_pointer() == Some("token"))
        .ok_or("no dereference of token")?;
    if !a.plan.checks_at("main", Site::At(token_deref)).is_empty() {
        return Err("token's dereference is instrumented".into());
    }
    let stale = main
        .body
        .iter()
        .position(|i| i.op.deref_pointer() == Some("stale_token"))
        .ok_or("no dereference of stale_token")?;
    let r = execute(&apply_plan(&e.program, &a.plan), &debug_opts()).map_err(|e| e.to_string())?;
    let uafs: Vec<_> = r.violations.iter().filter(|v| v.class == ViolationClass::Uaf).collect();
    if r.violations.len() != 1 || uafs.len() != 1 || uafs[0].function != "main" || uafs[0].index != stale {
        return Err(format!("violations {:?}", r.violations));
    }
    Ok(format!("tainted {{self.ptr, local_token, stale_token}}, owners {{local_token, stale_token}}, one UAF at main:{stale}"))
}

pub fn selectivity(entries: &[CorpusEntry]) -> Outcome {
    let report = run_corpus(entries)?;
    let mut n = 0;
    let (mut lsum, mut bsum) = (0, 0);
    for r in report.entries.iter().filter(|r| r.has_pointer) {
        if r.litersan_sites >= r.baseline_sites {
            return Err(format!("{}: {} litersan sites vs {} baseline", r.name, r.litersan_sites, r.baseline_sites));
        }
        n += 1;
        lsum += r.litersan_sites;
        bsum += r.baseline_sites;
    }
    Ok(format!("{n} programs, {lsum} litersan sites vs {bsum} baseline sites"))
}

pub fn matrix() -> Outcome {
    for c in CELLS {
        check_cell(c)?;
    }
    for e in corpus() {
        let a = analyze(&e.program).map_err(|x| x.to_string())?;
        super::matrix::orderings_hold(&a).map_err(|x| format!("{}: {x}", e.name))?;
    }
    Ok(format!("{} cells exact, orderings hold on the corpus", CELLS.len()))
}

pub fn round_trip(p: &Program) -> Result<(), String> {
    let text = print_program(p);
    let back = parse_program(&text).map_err(|e| e.to_string())?;
    if &back != p || print_program(&back) != text {
        return Err("print/parse is not the identity".into());
    }
    Ok(())
}

pub fn random_call_graph(seed: u64) -> Program {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=12);
    let sigs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let pairs = |k: usize, rng: &mut ChaCha8Rng| -> Vec<(usize, usize)> {
        (0..rng.gen_range(0..=k)).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect()
    };
    let calls = pairs(2 * n, &mut rng);
    let taken = pairs(n, &mut rng);
    let icalls = pairs(n / 2 + 1, &mut rng);
    parse_program(&call_graph_source(&sigs, &calls, &taken, &icalls)).expect("call graph source parses")
}

pub fn reachability_matches(p: &Program) -> Result<(), String> {
    let g = build_call_graph(p).map_err(|e| e.to_string())?;
    let got = compute_reachable_from(&g, &p.entries());
    let want = bfs_reachable(p);
    if got != want {
        return Err(format!("reachable {got:?}, breadth-first search {want:?}"));
    }
    Ok(())
}

pub fn structural(entries: &[CorpusEntry]) -> Outcome {
    for e in entries {
        round_trip(&e.program).map_err(|x| format!("{}: {x}", e.name))?;
        let a = analyze(&e.program).map_err(|x| x.to_string())?;
        if apply_plan(&e.program, &a.plan).strip() != e.program {
            return Err(format!("{}: strip(apply) changed the program", e.name));
        }
        if parse_program(&litersan::instrument::strip_text(&apply_plan(&e.program, &a.plan).print()))
            .map_err(|x| x.to_string())?
            != e.program
        {
            return Err(format!("{}: stripped text does not parse back", e.name));
        }
    }
    // Every corpus execution with the dual-map check on.
    run_corpus(entries)?;
    let mut executed = 0;
    for seed in 0..200u64 {
        let p = generate(seed, 10 + (seed as usize % 31));
        round_trip(&p).map_err(|x| format!("generated seed {seed}: {x}"))?;
        let a = analyze(&p).map_err(|x| format!("seed {seed}: {x}"))?;
        let ip = apply_plan(&p, &a.plan);
        if ip.strip() != p {
            return Err(format!("generated seed {seed}: strip(apply) changed the program"));
        }
        execute(&ip, &debug_opts()).map_err(|x| format!("generated seed {seed}: {x}"))?;
        executed += 1;
    }
    for seed in 0..200 {
        reachability_matches(&random_call_graph(seed)).map_err(|x| format!("call graph {seed}: {x}"))?;
    }
    Ok(format!(
        "{} corpus programs round-trip and strip; {executed} generated runs consistent; 200 call graphs match",
        entries.len()
    ))
}
