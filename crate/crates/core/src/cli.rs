//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{self, BenchMode, BenchOptions};
use crate::compile::compile;
use crate::container;
use crate::disasm::disassemble;
use crate::engine::EngineConfig;
use crate::frontend::{ast, enumerate_universe, parse};
use crate::instrument::{insert_probes, InstrumentMode};
use crate::report::{self, CoverageReport};
use crate::run::{run_file, CoverageMode, RunOptions};
use crate::transform::transform;
use crate::vm::ExitStatus;

pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;

#[derive(Parser, Debug)]
#[command(name = "decov", version, about = "Line and branch coverage for Mini programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a program and report its coverage.
    Run(RunArgs),
    /// Time every coverage mode on each program in a directory.
    Bench(BenchArgs),
    /// Print the disassembly of a program or container.
    Dis {
        file: PathBuf,
        /// Compile without branch markers.
        #[arg(long)]
        plain: bool,
    },
    /// Print the syntax tree.
    DumpAst {
        file: PathBuf,
        /// Show the tree after empty arms and branch markers are added.
        #[arg(long)]
        transformed: bool,
    },
    /// Insert probes and write the result as a container.
    Instrument {
        file: PathBuf,
        #[arg(long)]
        branch: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Print the instrumented disassembly.
        #[arg(long)]
        dis: bool,
    },
    /// Compile a program into a container.
    Compile {
        file: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare two JSON coverage reports.
    Diff { a: PathBuf, b: PathBuf },
}

#[derive(Args, Debug)]
pub struct RunArgs {
    pub file: PathBuf,
    /// Also measure branch coverage.
    #[arg(long)]
    pub branch: bool,
    #[arg(long, value_enum, default_value = "probe")]
    pub mode: CoverageMode,
    /// Executions of a recorded probe before a removal batch.
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Path prefix of files to measure (repeatable). Defaults to the
    /// program's directory.
    #[arg(long)]
    pub include: Vec<String>,
    /// Write the report here instead of standard error.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Do not produce a report.
    #[arg(long, short)]
    pub quiet: bool,
    /// Print engine and interpreter counters to standard error.
    #[arg(long)]
    pub stats: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    pub suite: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Modes to time (repeatable); default is all of them.
    #[arg(long)]
    pub mode: Vec<String>,
    #[arg(long)]
    pub branch: bool,
    /// Also write the results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args(args: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match cli.command {
        Command::Run(a) => cmd_run(a, out, err),
        Command::Bench(a) => cmd_bench(a, out, err),
        Command::Dis { file, plain } => cmd_dis(&file, plain, out, err),
        Command::DumpAst { file, transformed } => with_source(&file, err, |src, name| {
            let module = parse(src, name).map_err(|e| format!("{name}:{e}"))?;
            let module = if transformed { transform(module) } else { module };
            let _ = write!(out, "{}", ast::to_sexpr(&module));
            Ok(0)
        }),
        Command::Instrument { file, branch, output, dis } => cmd_instrument(&file, branch, output, dis, out, err),
        Command::Compile { file, output } => with_source(&file, err, |src, name| {
            let module = transform(parse(src, name).map_err(|e| format!("{name}:{e}"))?);
            let code = compile(&module).map_err(|e| format!("{name}: {e}"))?;
            let bytes = container::write(&code, &enumerate_universe(&module));
            std::fs::write(&output, bytes).map_err(|e| format!("{}: {e}", output.display()))?;
            Ok(0)
        }),
        Command::Diff { a, b } => cmd_diff(&a, &b, out, err),
    }
}

fn with_source(
    file: &Path,
    err: &mut dyn Write,
    f: impl FnOnce(&str, &str) -> Result<i32, String>,
) -> i32 {
    let name = file.to_string_lossy().into_owned();
    let result = std::fs::read_to_string(file).map_err(|e| format!("{name}: {e}")).and_then(|src| f(&src, &name));
    match result {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "decov: {msg}");
            EXIT_DATA
        }
    }
}

fn cmd_run(a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut engine = match EngineConfig::default().from_env() {
        Ok(c) => c,
        Err(msg) => {
            let _ = writeln!(err, "decov: {msg}");
            return EXIT_USAGE;
        }
    };
    if let Some(t) = a.threshold {
        if t == 0 {
            let _ = writeln!(err, "decov: --threshold must be positive");
            return EXIT_USAGE;
        }
        engine.threshold = t;
    }
    let opts = RunOptions {
        mode: a.mode,
        branch: a.branch,
        engine,
        include: a.include.clone(),
        check_skips: std::env::var_os("DECOV_NO_SKIP_CHECK").is_none(),
    };
    let result = match run_file(&a.file, &opts, out) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "decov: {e}");
            return EXIT_DATA;
        }
    };
    let _ = out.flush();
    match &result.status {
        ExitStatus::Ok => {}
        ExitStatus::Uncaught(exc) => {
            let _ = writeln!(err, "uncaught exception: {exc}");
        }
        ExitStatus::Fault(msg) => {
            let _ = writeln!(err, "decov: internal error: {msg}");
        }
    }
    if a.stats {
        let e = &result.engine;
        let _ = writeln!(
            err,
            "fires {} batches {} rewrites {} eliminated {} stale {} calls {} trace-events {} skip-checks {} skip-violations {}",
            e.fires,
            e.batches,
            e.rewrites,
            e.eliminated,
            e.stale_fires,
            result.vm.calls,
            result.trace_events,
            result.vm.skip_checks,
            result.vm.skip_violations
        );
    }
    if let (Some(report), false) = (&result.report, a.quiet) {
        let text = if a.json { report.to_json() } else { report.to_text(a.branch) };
        match &a.report {
            Some(path) => {
                if let Err(e) = std::fs::write(path, text) {
                    let _ = writeln!(err, "decov: {}: {e}", path.display());
                    return EXIT_DATA;
                }
            }
            None => {
                let _ = write!(err, "{text}");
            }
        }
    }
    result.status.code()
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut modes = Vec::new();
    for name in &a.mode {
        match BenchMode::from_name(name) {
            Some(m) => modes.push(m),
            None => {
                let _ = writeln!(err, "decov: unknown bench mode {name:?}");
                return EXIT_USAGE;
            }
        }
    }
    if modes.is_empty() {
        modes = BenchMode::ALL.to_vec();
    }
    if a.runs < 5 {
        let _ = writeln!(err, "decov: --runs must be at least 5");
        return EXIT_USAGE;
    }
    let exe = match std::env::current_exe() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "decov: cannot locate own binary: {e}");
            return EXIT_DATA;
        }
    };
    let programs = match bench::suite_programs(&a.suite) {
        Ok(p) => p,
        Err(msg) => {
            let _ = writeln!(err, "decov: {msg}");
            return EXIT_DATA;
        }
    };
    let opts = BenchOptions { runs: a.runs, modes, branch: a.branch };
    match bench::run_suite(&exe, &programs, &opts) {
        Ok(report) => {
            let _ = write!(out, "{}", report.to_text());
            if let Some(path) = &a.json {
                let json = serde_json::to_string_pretty(&report).expect("bench report serializes");
                if let Err(e) = std::fs::write(path, json) {
                    let _ = writeln!(err, "decov: {}: {e}", path.display());
                    return EXIT_DATA;
                }
            }
            0
        }
        Err(msg) => {
            let _ = writeln!(err, "decov: {msg}");
            1
        }
    }
}

fn cmd_dis(file: &Path, plain: bool, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let name = file.to_string_lossy().into_owned();
    let bytes = match std::fs::read(file) {
        Ok(b) => b,
        Err(e) => {
            let _ = writeln!(err, "decov: {name}: {e}");
            return EXIT_DATA;
        }
    };
    let code = if container::is_container(&bytes) {
        container::read(&bytes).map(|(c, _)| c).map_err(|e| format!("{name}: {e}"))
    } else {
        String::from_utf8(bytes)
            .map_err(|_| format!("{name}: not valid UTF-8"))
            .and_then(|src| parse(&src, &name).map_err(|e| format!("{name}:{e}")))
            .and_then(|m| compile(&if plain { m } else { transform(m) }).map_err(|e| format!("{name}: {e}")))
    };
    match code.and_then(|c| disassemble(&c).map_err(|e| e.to_string())) {
        Ok(text) => {
            let _ = write!(out, "{text}");
            0
        }
        Err(msg) => {
            let _ = writeln!(err, "decov: {msg}");
            EXIT_DATA
        }
    }
}

fn cmd_instrument(
    file: &Path,
    branch: bool,
    output: Option<PathBuf>,
    dis: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let name = file.to_string_lossy().into_owned();
    let result = (|| -> Result<(), String> {
        let bytes = std::fs::read(file).map_err(|e| format!("{name}: {e}"))?;
        let (code, universe) = if container::is_container(&bytes) {
            container::read(&bytes).map_err(|e| format!("{name}: {e}"))?
        } else {
            let src = String::from_utf8(bytes).map_err(|_| format!("{name}: not valid UTF-8"))?;
            let module = transform(parse(&src, &name).map_err(|e| format!("{name}:{e}"))?);
            let code = compile(&module).map_err(|e| format!("{name}: {e}"))?;
            (code, enumerate_universe(&module))
        };
        let mode = if branch { InstrumentMode::LineBranch } else { InstrumentMode::Line };
        let (code, map) = insert_probes(&code, &universe, mode, 0).map_err(|e| format!("{name}: {e}"))?;
        if dis {
            let _ = write!(out, "{}", disassemble(&code).map_err(|e| e.to_string())?);
        }
        let _ = writeln!(err, "{} probes, {} layout passes", map.sites.len(), map.max_iterations);
        if let Some(path) = output {
            std::fs::write(&path, container::write(&code, &universe)).map_err(|e| format!("{}: {e}", path.display()))?;
        }
        Ok(())
    })();
    match result {
        Ok(()) => 0,
        Err(msg) => {
            let _ = writeln!(err, "decov: {msg}");
            EXIT_DATA
        }
    }
}

fn read_report(path: &Path) -> Result<CoverageReport, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    CoverageReport::from_json(&text)
        .map_err(|source| report::SchemaError { path: path.display().to_string(), source }.to_string())
}

fn cmd_diff(a: &Path, b: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (ra, rb) = match (read_report(a), read_report(b)) {
        (Ok(ra), Ok(rb)) => (ra, rb),
        (Err(msg), _) | (_, Err(msg)) => {
            let _ = writeln!(err, "decov: {msg}");
            return EXIT_DATA;
        }
    };
    let d = report::diff(&ra, &rb);
    if d.is_empty() {
        let _ = writeln!(out, "reports are identical");
        0
    } else {
        for line in &d.lines {
            let _ = writeln!(out, "{line}");
        }
        1
    }
}

