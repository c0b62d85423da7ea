//! Bug-pattern corpus: `.lrs` programs with JSON sidecars holding the
//! expected violations per mode, and the two-mode comparison over them.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asan::{count_access_sites, execute_asan, AsanConfig};
use crate::instrument::apply_plan;
use crate::ir::{infer_kinds, parse_program, ParseError, Program};
use crate::pipeline::{analyze, PipelineError};
use crate::runtime::{execute, RunOptions, RuntimeError, Violation, ViolationClass};

pub const CORPUS_ENV: &str = "LITERSAN_CORPUS";

/// Tag marking the analogs of the rows the shadow-memory baseline misses.
pub const TABLE_GAP_TAG: &str = "table-gap";
/// Tag marking programs that demonstrate a baseline mechanism failing.
pub const MECHANISM_TAG: &str = "mechanism";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpectedViolation {
    pub class: ViolationClass,
    pub function: String,
    pub index: usize,
}

impl ExpectedViolation {
    pub fn of(v: &Violation) -> Self {
        ExpectedViolation { class: v.class, function: v.function.clone(), index: v.index }
    }
}

impl std::fmt::Display for ExpectedViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}:{}", self.class, self.function, self.index)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Expectations {
    pub litersan: Vec<ExpectedViolation>,
    pub asan: Vec<ExpectedViolation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: u32,
    pub description: String,
    pub provenance: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub safe: bool,
    pub expected: Expectations,
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub path: PathBuf,
    pub source: String,
    pub program: Program,
    pub sidecar: Sidecar,
}

impl CorpusEntry {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.sidecar.tags.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Sidecar { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{name}: {source}")]
    Pipeline { name: String, source: PipelineError },
    #[error("{name} ({mode}): {source}")]
    Runtime { name: String, mode: &'static str, source: RuntimeError },
}

/// The corpus directory from the environment, else the one shipped with
/// the crate.
pub fn default_dir() -> PathBuf {
    match std::env::var_os(CORPUS_ENV) {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus"),
    }
}

pub fn load_entry(path: &Path) -> Result<CorpusEntry, CorpusError> {
    let io = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let source = fs::read_to_string(path).map_err(io)?;
    let program = parse_program(&source).map_err(|source| CorpusError::Parse { path: path.to_path_buf(), source })?;
    let side_path = path.with_extension("json");
    let side = fs::read_to_string(&side_path).map_err(|source| CorpusError::Io { path: side_path.clone(), source })?;
    let sidecar = serde_json::from_str(&side).map_err(|source| CorpusError::Sidecar { path: side_path, source })?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(CorpusEntry { name, path: path.to_path_buf(), source, program, sidecar })
}

/// Every `.lrs` file in `dir`, sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let mut paths = Vec::new();
    for e in fs::read_dir(dir).map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })? {
        let e = e.map_err(|source| CorpusError::Io { path: dir.to_path_buf(), source })?;
        let p = e.path();
        if p.extension().is_some_and(|x| x == "lrs") {
            paths.push(p);
        }
    }
    paths.sort();
    paths.iter().map(|p| load_entry(p)).collect()
}

pub fn has_pointer(p: &Program) -> bool {
    p.functions.iter().any(|f| infer_kinds(p, f).values().any(|k| k.is_pointer()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeOutcome {
    pub violations: Vec<Violation>,
    pub faults: Vec<Violation>,
    pub expected: Vec<ExpectedViolation>,
    pub matched: bool,
}

impl ModeOutcome {
    fn new(violations: Vec<Violation>, faults: Vec<Violation>, expected: &[ExpectedViolation]) -> Self {
        let got: Vec<_> = violations.iter().map(ExpectedViolation::of).collect();
        let matched = faults.is_empty() && got == expected;
        ModeOutcome { violations, faults, expected: expected.to_vec(), matched }
    }

    pub fn classes(&self) -> BTreeSet<ViolationClass> {
        self.violations.iter().map(|v| v.class).collect()
    }

    /// Human-readable difference from the expectation; empty when matched.
    pub fn diff(&self) -> Vec<String> {
        let mut out = Vec::new();
        let got: Vec<_> = self.violations.iter().map(ExpectedViolation::of).collect();
        if got != self.expected {
            let show = |v: &[ExpectedViolation]| v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ");
            out.push(format!("expected [{}], got [{}]", show(&self.expected), show(&got)));
        }
        for f in &self.faults {
            out.push(format!("unchecked fault: {f}"));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryResult {
    pub name: String,
    pub tags: Vec<String>,
    pub safe: bool,
    pub has_pointer: bool,
    /// Distinct sites carrying litersan checks.
    pub litersan_sites: usize,
    pub litersan_checks: usize,
    /// Sites the baseline instruments: every allocation, access and free.
    pub baseline_sites: usize,
    pub litersan: ModeOutcome,
    pub asan: ModeOutcome,
}

impl EntryResult {
    pub fn ok(&self) -> bool {
        self.litersan.matched && self.asan.matched && (!self.has_pointer || self.litersan_sites < self.baseline_sites)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub schema: u32,
    pub entries: Vec<EntryResult>,
    pub ok: bool,
}

impl ComparisonReport {
    pub fn new(entries: Vec<EntryResult>) -> Self {
        let ok = entries.iter().all(EntryResult::ok);
        ComparisonReport { schema: 1, entries, ok }
    }
}

pub fn compare_entry(e: &CorpusEntry, cfg: AsanConfig, opts: &RunOptions) -> Result<EntryResult, CorpusError> {
    let a = analyze(&e.program).map_err(|source| CorpusError::Pipeline { name: e.name.clone(), source })?;
    let ip = apply_plan(&e.program, &a.plan);
    let lr = execute(&ip, opts).map_err(|source| CorpusError::Runtime { name: e.name.clone(), mode: "litersan", source })?;
    let ar = execute_asan(&e.program, cfg, opts)
        .map_err(|source| CorpusError::Runtime { name: e.name.clone(), mode: "asan", source })?;
    Ok(EntryResult {
        name: e.name.clone(),
        tags: e.sidecar.tags.clone(),
        safe: e.sidecar.safe,
        has_pointer: has_pointer(&e.program),
        litersan_sites: a.counts.sites,
        litersan_checks: a.counts.total,
        baseline_sites: count_access_sites(&e.program, &a.reachable),
        litersan: ModeOutcome::new(lr.violations, lr.faults, &e.sidecar.expected.litersan),
        asan: ModeOutcome::new(ar.violations, ar.faults, &e.sidecar.expected.asan),
    })
}

pub fn compare(entries: &[CorpusEntry], cfg: AsanConfig, opts: &RunOptions) -> Result<ComparisonReport, CorpusError> {
    let results = entries.iter().map(|e| compare_entry(e, cfg, opts)).collect::<Result<Vec<_>, _>>()?;
    Ok(ComparisonReport::new(results))
}
