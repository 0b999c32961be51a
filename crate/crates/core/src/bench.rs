//! Wall-clock comparison of coverage modes. Every measurement is a fresh
//! child process of the `decov` binary; the reported time is the median of
//! the runs minus the median start-up time of an empty program.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    None,
    TraceNull,
    TraceCov,
    ProbeFull,
    ProbeFlagOnly,
    ProbeNoDeinstr,
}

impl BenchMode {
    pub const ALL: [BenchMode; 6] = [
        BenchMode::None,
        BenchMode::TraceNull,
        BenchMode::TraceCov,
        BenchMode::ProbeFull,
        BenchMode::ProbeFlagOnly,
        BenchMode::ProbeNoDeinstr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::None => "none",
            BenchMode::TraceNull => "trace-null",
            BenchMode::TraceCov => "trace-cov",
            BenchMode::ProbeFull => "probe-full",
            BenchMode::ProbeFlagOnly => "probe-flag-only",
            BenchMode::ProbeNoDeinstr => "probe-no-deinstr",
        }
    }

    pub fn from_name(name: &str) -> Option<BenchMode> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    fn command(self, exe: &Path, program: &Path, branch: bool) -> Command {
        let mut cmd = Command::new(exe);
        let mode = match self {
            BenchMode::None => "none",
            BenchMode::TraceNull => "trace-null",
            BenchMode::TraceCov => "trace-cov",
            _ => "probe",
        };
        cmd.arg("run").arg(program).arg("--mode").arg(mode).arg("--quiet");
        if branch {
            cmd.arg("--branch");
        }
        for var in ["DECOV_NO_ELIM", "DECOV_NO_DEINSTR", "DECOV_THRESHOLD"] {
            cmd.env_remove(var);
        }
        // the debug skip check is a test aid and would be timed as probe cost
        cmd.env("DECOV_NO_SKIP_CHECK", "1");
        match self {
            BenchMode::ProbeFlagOnly => {
                cmd.env("DECOV_NO_ELIM", "1");
            }
            BenchMode::ProbeNoDeinstr => {
                cmd.env("DECOV_NO_DEINSTR", "1");
            }
            _ => {}
        }
        cmd.stdout(Stdio::null()).stderr(Stdio::null());
        cmd
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub runs: usize,
    pub modes: Vec<BenchMode>,
    pub branch: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { runs: 5, modes: BenchMode::ALL.to_vec(), branch: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub program: String,
    pub mode: BenchMode,
    /// Median seconds with start-up subtracted.
    pub median_secs: f64,
    /// `median_secs` over the same program's `none` median.
    pub ratio: f64,
}

impl BenchResult {
    /// Slowdown relative to no coverage, e.g. 0.05 for 5%.
    pub fn overhead(&self) -> f64 {
        self.ratio - 1.0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub runs: usize,
    pub startup_secs: f64,
    pub results: Vec<BenchResult>,
}

impl BenchReport {
    pub fn get(&self, program: &str, mode: BenchMode) -> Option<&BenchResult> {
        self.results.iter().find(|r| r.program == program && r.mode == mode)
    }

    pub fn programs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.results {
            if !out.contains(&r.program) {
                out.push(r.program.clone());
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("runs {} startup {:.4}s\n", self.runs, self.startup_secs);
        out.push_str(&format!("{:<24} {:<18} {:>10} {:>8}\n", "program", "mode", "median s", "ratio"));
        for r in &self.results {
            out.push_str(&format!("{:<24} {:<18} {:>10.4} {:>8.3}\n", r.program, r.mode.name(), r.median_secs, r.ratio));
        }
        out
    }
}

pub fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => samples[n / 2],
        _ => (samples[n / 2 - 1] + samples[n / 2]) / 2.0,
    }
}

fn time_once(mut cmd: Command) -> Result<f64, String> {
    let start = Instant::now();
    let status = cmd.status().map_err(|e| format!("cannot start benchmark child: {e}"))?;
    let elapsed = start.elapsed().as_secs_f64();
    if !status.success() {
        return Err(format!("benchmark child failed with {status}"));
    }
    Ok(elapsed)
}

/// `.mini` files directly inside `dir`, sorted by name.
pub fn suite_programs(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mini"))
        .collect();
    out.sort();
    Ok(out)
}

/// Runs every program under every mode; `exe` is the `decov` binary.
pub fn run_suite(exe: &Path, programs: &[PathBuf], opts: &BenchOptions) -> Result<BenchReport, String> {
    let runs = opts.runs.max(1);
    let empty = tempfile_empty()?;
    let mut startup: Vec<f64> = Vec::new();
    for _ in 0..runs {
        startup.push(time_once(BenchMode::None.command(exe, &empty, false))?);
    }
    let _ = std::fs::remove_file(&empty);
    let startup = median(&mut startup);

    let mut modes = opts.modes.clone();
    if !modes.contains(&BenchMode::None) {
        modes.insert(0, BenchMode::None);
    }
    let mut results = Vec::new();
    for program in programs {
        let name = program.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        // rounds visit every mode once so slow drift hits all modes alike
        let mut samples: Vec<Vec<f64>> = vec![Vec::new(); modes.len()];
        for _ in 0..runs {
            for (i, &mode) in modes.iter().enumerate() {
                samples[i].push(time_once(mode.command(exe, program, opts.branch))?);
            }
        }
        let secs: Vec<f64> = samples.iter_mut().map(|s| (median(s) - startup).max(1e-9)).collect();
        let base = modes.iter().position(|&m| m == BenchMode::None).map_or(f64::NAN, |i| secs[i]);
        for (i, &mode) in modes.iter().enumerate() {
            results.push(BenchResult { program: name.clone(), mode, median_secs: secs[i], ratio: secs[i] / base });
        }
    }
    Ok(BenchReport { runs, startup_secs: startup, results })
}

fn tempfile_empty() -> Result<PathBuf, String> {
    let path = std::env::temp_dir().join(format!("decov-empty-{}.mini", std::process::id()));
    std::fs::write(&path, "pass\n").map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in BenchMode::ALL {
            assert_eq!(BenchMode::from_name(m.name()), Some(m));
        }
    }
}
