#![allow(dead_code)]

pub mod fuzz;
pub mod oracle;
pub mod relocation;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use decov::engine::EngineConfig;
use decov::run::{run_file, CoverageMode, RunOptions, RunResult};

pub const FUZZ_PROGRAMS: u64 = 220;
pub const THRESHOLDS: [u32; 3] = [1, 2, 64];

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

pub fn bench_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/bench")
}

/// Hand-written corpus programs, sorted by name.
pub fn corpus() -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "mini"))
        .collect();
    out.sort();
    out
}

/// Writes the fuzz programs into `dir` and returns their paths.
pub fn fuzz_files(dir: &Path, count: u64) -> Vec<PathBuf> {
    (0..count)
        .map(|seed| {
            let path = dir.join(format!("fuzz_{seed:03}.mini"));
            std::fs::write(&path, fuzz::program(seed)).unwrap();
            path
        })
        .collect()
}

pub fn options(mode: CoverageMode, branch: bool, engine: EngineConfig) -> RunOptions {
    RunOptions { mode, branch, engine, include: Vec::new(), check_skips: true }
}

/// Runs a file, capturing what it prints.
pub fn run(path: &Path, opts: &RunOptions) -> (RunResult, String) {
    let mut out = Vec::new();
    let result = run_file(path, opts, &mut out).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    (result, String::from_utf8(out).unwrap())
}

pub fn probe(threshold: u32) -> EngineConfig {
    EngineConfig { threshold, ..EngineConfig::default() }
}

/// Executed lines of the only file in a run's report.
pub fn executed_lines(r: &RunResult) -> BTreeSet<u32> {
    let report = r.report.as_ref().expect("report");
    assert_eq!(report.files.len(), 1, "expected one measured file");
    report.files.values().next().unwrap().executed_lines.iter().copied().collect()
}

pub fn executed_branches(r: &RunResult) -> BTreeSet<(u32, u32)> {
    let report = r.report.as_ref().expect("report");
    report.files.values().next().unwrap().executed_branches.iter().map(|[o, d]| (*o, *d)).collect()
}

/// Parses a program file for the oracle.
pub fn oracle_run(path: &Path) -> oracle::OracleRun {
    let src = std::fs::read_to_string(path).unwrap();
    let module = decov::frontend::parse(&src, &path.to_string_lossy()).unwrap();
    oracle::run(&module, 5_000_000)
}

/// Probe-mode run that keeps the loader, so tests can inspect the code the
/// engine ended up with.
pub fn probe_session(path: &Path, engine: EngineConfig) -> (decov::loader::Loader, decov::vm::ExitStatus, decov::vm::VmStats) {
    use decov::engine::Engine;
    use decov::loader::Loader;
    use decov::run::policy_for;
    let opts = options(CoverageMode::Probe, true, engine);
    let mut loader = Loader::new(policy_for(path, &opts), Engine::new(engine));
    let root = loader.load_main(path).unwrap();
    let mut out = Vec::new();
    let mut vm = decov::vm::Vm::new(&mut out);
    let status = vm.run(&root, &mut loader, None);
    let stats = vm.stats.clone();
    drop(vm);
    (loader, status, stats)
}

/// The run's report as JSON text.
pub fn report_json(r: &RunResult) -> String {
    r.report.as_ref().expect("report").to_json()
}
