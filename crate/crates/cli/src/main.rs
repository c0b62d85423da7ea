use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use litersan::asan::{execute_asan, AsanConfig};
use litersan::corpus::{compare_entry, load_dir, ComparisonReport, CORPUS_ENV};
use litersan::gen::{generate_source, MAX_SIZE};
use litersan::instrument::apply_plan;
use litersan::ir::{parse_program, Program};
use litersan::pipeline::analyze;
use litersan::runtime::{execute, execute_plain, ExecutionReport, RunOptions};

#[derive(Parser)]
#[command(name = "litersan", version, about = "Selective sanitizer for the mini-IR")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunMode {
    Litersan,
    Asan,
    None,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print reachability, risky pointers, taint sets, templates and the plan.
    Analyze {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Execute a program under one of the runtimes.
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "litersan")]
        mode: RunMode,
        #[arg(long, default_value_t = 16)]
        redzone: i64,
        #[arg(long, default_value_t = 4)]
        quarantine: usize,
        /// Stop at the first violation.
        #[arg(long)]
        strict: bool,
        /// Check metadata consistency after every instruction.
        #[arg(long)]
        debug: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run both runtimes over a corpus directory and check expectations.
    Compare {
        #[arg(env = CORPUS_ENV)]
        dir: PathBuf,
        #[arg(long, default_value_t = 16)]
        redzone: i64,
        #[arg(long, default_value_t = 4)]
        quarantine: usize,
        #[arg(long)]
        json: bool,
    },
    /// Print a random program.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        size: usize,
    },
}

fn load(file: &PathBuf) -> Result<Program> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    parse_program(&text).with_context(|| format!("parsing {}", file.display()))
}

fn print_report(r: &ExecutionReport, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(r)?);
        return Ok(());
    }
    println!("mode: {}  executed: {}", r.mode, r.executed_instructions);
    for v in &r.violations {
        println!("violation: {v}");
    }
    for f in &r.faults {
        println!("fault: {f}");
    }
    if r.violations.is_empty() && r.faults.is_empty() {
        println!("no violations");
    }
    Ok(())
}

fn analyze_cmd(file: &PathBuf, json: bool) -> Result<i32> {
    let p = load(file)?;
    let a = analyze(&p)?;
    if json {
        let mut v = serde_json::to_value(&a)?;
        v["schema"] = 1.into();
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(0);
    }
    println!("reachable: {}", a.reachable.iter().cloned().collect::<Vec<_>>().join(", "));
    println!("spatially risky: {}", a.risk.spatially_risky.len());
    for p in &a.risk.spatially_risky {
        println!("  {p}");
    }
    println!("temporally risky: {}", a.risk.temporally_risky.len());
    for p in &a.risk.temporally_risky {
        println!("  {p}");
    }
    println!("unsafe api sites: {}", a.risk.unsafe_api_sites.len());
    for s in &a.risk.unsafe_api_sites {
        println!("  {}:{} {:?}", s.function, s.index, s.api);
    }
    for (src, set) in &a.tainted.sets {
        let members: Vec<String> = set.members.iter().map(|m| m.to_string()).collect();
        println!("tainted from {src}: {{{}}}", members.join(", "));
    }
    for (p, t) in &a.temporal {
        let owners: Vec<String> = t.owner_set.iter().map(|m| m.to_string()).collect();
        println!("owners of {p}: {{{}}}", owners.join(", "));
    }
    println!("instrumented sites: {}  checks: {}", a.counts.sites, a.counts.total);
    println!();
    println!("{}", apply_plan(&p, &a.plan).print());
    Ok(0)
}

fn run_cmd(file: &PathBuf, mode: RunMode, cfg: AsanConfig, opts: RunOptions, json: bool) -> Result<i32> {
    let p = load(file)?;
    let report = match mode {
        RunMode::Litersan => {
            let a = analyze(&p)?;
            execute(&apply_plan(&p, &a.plan), &opts)?
        }
        RunMode::Asan => execute_asan(&p, cfg, &opts)?,
        RunMode::None => execute_plain(&p, &opts)?,
    };
    print_report(&report, json)?;
    Ok(report.exit_code())
}

fn compare_cmd(dir: &PathBuf, cfg: AsanConfig, json: bool) -> Result<i32> {
    let entries = load_dir(dir)?;
    let opts = RunOptions { debug: true, ..RunOptions::default() };
    let results = entries.par_iter().map(|e| compare_entry(e, cfg, &opts)).collect::<Result<Vec<_>, _>>()?;
    let report = ComparisonReport::new(results);
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{:<22} {:>6} {:>6}  {:<18} {:<18} status", "program", "lsan", "base", "litersan", "asan");
        for r in &report.entries {
            let classes = |o: &litersan::corpus::ModeOutcome| {
                let c: Vec<&str> = o.violations.iter().map(|v| v.class.name()).collect();
                if c.is_empty() {
                    "-".to_string()
                } else {
                    c.join(",")
                }
            };
            let status = if r.ok() { "ok" } else { "MISMATCH" };
            println!(
                "{:<22} {:>6} {:>6}  {:<18} {:<18} {status}",
                r.name,
                r.litersan_sites,
                r.baseline_sites,
                classes(&r.litersan),
                classes(&r.asan)
            );
            for d in r.litersan.diff() {
                println!("    litersan: {d}");
            }
            for d in r.asan.diff() {
                println!("    asan: {d}");
            }
            if r.has_pointer && r.litersan_sites >= r.baseline_sites {
                println!("    litersan sites not below baseline");
            }
        }
    }
    Ok(if report.ok { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Analyze { file, json } => analyze_cmd(file, *json),
        Cmd::Run { file, mode, redzone, quarantine, strict, debug, json } => run_cmd(
            file,
            *mode,
            AsanConfig { redzone: *redzone, quarantine: *quarantine },
            RunOptions { strict: *strict, debug: *debug, ..RunOptions::default() },
            *json,
        ),
        Cmd::Compare { dir, redzone, quarantine, json } => {
            compare_cmd(dir, AsanConfig { redzone: *redzone, quarantine: *quarantine }, *json)
        }
        Cmd::Gen { seed, size } => {
            if *size > MAX_SIZE {
                Err(anyhow::anyhow!("size {size} exceeds the maximum of {MAX_SIZE}"))
            } else {
                println!("{}", generate_source(*seed, *size));
                Ok(0)
            }
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
