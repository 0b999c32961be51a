//! Running a program file under one coverage mode and producing its report.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::engine::{Engine, EngineConfig, EngineStats};
use crate::frontend::CoverableUniverse;
use crate::instrument::InstrumentMode;
use crate::loader::{absolute, prefix_string, LoadError, LoadPolicy, Loader};
use crate::report::{CoverageReport, FileCoverage};
use crate::trace::{LineTracer, TraceConfig, TraceMode};
use crate::vm::{ExitStatus, Vm, VmStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CoverageMode {
    /// No coverage at all.
    None,
    /// Line callback that only checks the file filter.
    TraceNull,
    /// Line callback recording lines and arcs.
    TraceCov,
    /// Self-removing bytecode probes.
    Probe,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: CoverageMode,
    pub branch: bool,
    pub engine: EngineConfig,
    /// Path prefixes of interest; empty means the main file's directory.
    pub include: Vec<String>,
    /// Let the VM check jumps over eliminated probes (debug builds).
    pub check_skips: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { mode: CoverageMode::Probe, branch: false, engine: EngineConfig::default(), include: Vec::new(), check_skips: true }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub status: ExitStatus,
    pub report: Option<CoverageReport>,
    pub env: BTreeMap<String, String>,
    pub engine: EngineStats,
    pub vm: VmStats,
    pub trace_events: u64,
    /// Largest number of layout passes any instrumented module needed.
    pub layout_iterations: u32,
}

/// Path relative to the working directory when it lies below it.
pub fn display_name(path: &str) -> String {
    if let Ok(cwd) = std::env::current_dir() {
        let prefix = prefix_string(&cwd);
        if let Some(rest) = path.strip_prefix(prefix.as_str()) {
            return rest.to_string();
        }
    }
    path.to_string()
}

/// Branches a line tracer can tell apart: those whose origin line has at
/// least two distinct destinations other than itself. A branch landing on
/// its own line produces no line transition.
pub fn detectable_branches(universe: &CoverableUniverse) -> BTreeSet<(u32, u32)> {
    let mut dests: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &(o, d) in &universe.branches {
        if o != d {
            dests.entry(o).or_default().insert(d);
        }
    }
    universe
        .branches
        .iter()
        .copied()
        .filter(|(o, d)| o != d && dests.get(o).is_some_and(|s| s.len() >= 2))
        .collect()
}

pub fn policy_for(main: &Path, opts: &RunOptions) -> LoadPolicy {
    let mode = if opts.branch { InstrumentMode::LineBranch } else { InstrumentMode::Line };
    let mut policy = LoadPolicy::for_main(main, mode, opts.mode == CoverageMode::Probe);
    if !opts.include.is_empty() {
        policy.include = opts
            .include
            .iter()
            .map(|p| {
                let abs = absolute(Path::new(p));
                if abs.is_dir() {
                    prefix_string(&abs)
                } else {
                    abs.to_string_lossy().into_owned()
                }
            })
            .collect();
    }
    policy
}

/// Loads `main` and runs it, writing program output to `out`.
pub fn run_file(main: &Path, opts: &RunOptions, out: &mut dyn Write) -> Result<RunResult, LoadError> {
    let policy = policy_for(main, opts);
    let mut loader = Loader::new(policy.clone(), Engine::new(opts.engine));
    let root = loader.load_main(main)?;

    let trace_mode = match opts.mode {
        CoverageMode::TraceNull => TraceMode::Null,
        CoverageMode::TraceCov => TraceMode::Collect,
        _ => TraceMode::Off,
    };
    let mut tracer = LineTracer::new(TraceConfig { mode: trace_mode, prefixes: policy.include.clone() });

    let (status, env, vm_stats) = {
        let mut vm = Vm::new(out);
        vm.check_skips &= opts.check_skips;
        let status = if trace_mode == TraceMode::Off {
            vm.run(&root, &mut loader, None)
        } else {
            vm.run(&root, &mut loader, Some(&mut tracer))
        };
        (status, vm.environment(), vm.stats.clone())
    };

    let selected: Vec<_> = loader.modules().iter().filter(|m| m.selected).collect();
    let report = match opts.mode {
        CoverageMode::Probe => {
            let facts = loader.engine.snapshot().facts();
            let files: Vec<FileCoverage> = selected
                .iter()
                .map(|m| {
                    let f = facts.get(&m.source).cloned().unwrap_or_default();
                    FileCoverage {
                        name: display_name(&m.source),
                        universe: &m.universe,
                        branch_universe: if opts.branch { m.universe.branches.clone() } else { BTreeSet::new() },
                        lines: f.lines,
                        branches: f.branches,
                    }
                })
                .collect();
            Some(CoverageReport::build(&files))
        }
        CoverageMode::TraceCov => {
            let traces = tracer.results();
            let files: Vec<FileCoverage> = selected
                .iter()
                .map(|m| {
                    let t = traces.get(&m.source).cloned().unwrap_or_default();
                    let branch_universe =
                        if opts.branch { detectable_branches(&m.universe) } else { BTreeSet::new() };
                    let branches = t.arcs.intersection(&branch_universe).copied().collect();
                    FileCoverage {
                        name: display_name(&m.source),
                        universe: &m.universe,
                        branch_universe,
                        lines: t.lines,
                        branches,
                    }
                })
                .collect();
            Some(CoverageReport::build(&files))
        }
        CoverageMode::None | CoverageMode::TraceNull => None,
    };

    Ok(RunResult {
        status,
        report,
        env,
        engine: loader.engine.stats.clone(),
        vm: vm_stats,
        trace_events: tracer.events,
        layout_iterations: loader.modules().iter().map(|m| m.layout_iterations).max().unwrap_or(0),
    })
}
