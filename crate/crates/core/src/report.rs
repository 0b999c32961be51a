//! Coverage reports: construction from covered facts, the JSON form, a text
//! table, and fact-level comparison of two reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::CoverableUniverse;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileReport {
    pub executed_lines: Vec<u32>,
    pub missing_lines: Vec<u32>,
    pub executed_branches: Vec<[u32; 2]>,
    pub missing_branches: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub line_percent: f64,
    pub branch_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageReport {
    pub files: BTreeMap<String, FileReport>,
    pub summary: Summary,
}

/// `100 * hit / total`, with an empty universe counting as fully covered.
pub fn percent(hit: usize, total: usize) -> f64 {
    if total == 0 {
        100.0
    } else {
        100.0 * hit as f64 / total as f64
    }
}

/// What one file contributes to a report.
#[derive(Debug, Clone)]
pub struct FileCoverage<'a> {
    pub name: String,
    pub universe: &'a CoverableUniverse,
    /// Branches that count for this run; tracing can see only some of them.
    pub branch_universe: BTreeSet<(u32, u32)>,
    pub lines: BTreeSet<u32>,
    pub branches: BTreeSet<(u32, u32)>,
}

impl FileReport {
    pub fn line_percent(&self) -> f64 {
        percent(self.executed_lines.len(), self.executed_lines.len() + self.missing_lines.len())
    }

    pub fn branch_percent(&self) -> f64 {
        percent(self.executed_branches.len(), self.executed_branches.len() + self.missing_branches.len())
    }
}

impl CoverageReport {
    /// Splits each universe into executed and missing parts. Facts outside
    /// the universe are ignored.
    pub fn build(files: &[FileCoverage]) -> Self {
        let mut out = BTreeMap::new();
        for f in files {
            let (executed_lines, missing_lines): (Vec<u32>, Vec<u32>) =
                f.universe.lines.iter().partition(|l| f.lines.contains(l));
            let (hit, missed): (Vec<_>, Vec<_>) = f.branch_universe.iter().partition(|b| f.branches.contains(b));
            out.insert(
                f.name.clone(),
                FileReport {
                    executed_lines,
                    missing_lines,
                    executed_branches: hit.into_iter().map(|(o, d)| [o, d]).collect(),
                    missing_branches: missed.into_iter().map(|(o, d)| [o, d]).collect(),
                },
            );
        }
        let report = CoverageReport { files: out, summary: Summary { line_percent: 0.0, branch_percent: 0.0 } };
        let summary = report.totals();
        CoverageReport { summary, ..report }
    }

    /// Summary recomputed from the per-file lists.
    pub fn totals(&self) -> Summary {
        let (mut lh, mut lt, mut bh, mut bt) = (0, 0, 0, 0);
        for f in self.files.values() {
            lh += f.executed_lines.len();
            lt += f.executed_lines.len() + f.missing_lines.len();
            bh += f.executed_branches.len();
            bt += f.executed_branches.len() + f.missing_branches.len();
        }
        Summary { line_percent: percent(lh, lt), branch_percent: percent(bh, bt) }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self, branches: bool) -> String {
        let mut out = String::new();
        let width = self.files.keys().map(|k| k.len()).max().unwrap_or(4).max(4);
        if branches {
            let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  missing", "file", "lines", "branch");
        } else {
            let _ = writeln!(out, "{:<width$}  {:>7}  missing", "file", "lines");
        }
        for (name, f) in &self.files {
            let mut missing: Vec<String> = f.missing_lines.iter().map(|l| l.to_string()).collect();
            let line_col = format!("{:.1}%", f.line_percent());
            if branches {
                missing.extend(f.missing_branches.iter().map(|[o, d]| format!("{o}->{d}")));
                let branch_col = format!("{:.1}%", f.branch_percent());
                let _ = writeln!(out, "{name:<width$}  {line_col:>7}  {branch_col:>7}  {}", missing.join(", "));
            } else {
                let _ = writeln!(out, "{name:<width$}  {line_col:>7}  {}", missing.join(", "));
            }
        }
        let line_col = format!("{:.1}%", self.summary.line_percent);
        if branches {
            let branch_col = format!("{:.1}%", self.summary.branch_percent);
            let _ = writeln!(out, "{:<width$}  {line_col:>7}  {branch_col:>7}", "total");
        } else {
            let _ = writeln!(out, "{:<width$}  {line_col:>7}", "total");
        }
        out
    }
}

#[derive(Debug, Error)]
#[error("{path}: not a coverage report: {source}")]
pub struct SchemaError {
    pub path: String,
    pub source: serde_json::Error,
}

/// Facts present in only one of two reports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportDiff {
    pub lines: Vec<String>,
}

impl ReportDiff {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

fn facts(r: &CoverageReport) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for (name, f) in &r.files {
        for l in &f.executed_lines {
            out.insert(format!("{name} line {l} executed"));
        }
        for l in &f.missing_lines {
            out.insert(format!("{name} line {l} missing"));
        }
        for [o, d] in &f.executed_branches {
            out.insert(format!("{name} branch {o}->{d} executed"));
        }
        for [o, d] in &f.missing_branches {
            out.insert(format!("{name} branch {o}->{d} missing"));
        }
    }
    out
}

/// Lists every fact in `a` but not `b` (`-`) and in `b` but not `a` (`+`),
/// plus any summary mismatch.
pub fn diff(a: &CoverageReport, b: &CoverageReport) -> ReportDiff {
    let fa = facts(a);
    let fb = facts(b);
    let mut lines: Vec<String> = fa.difference(&fb).map(|f| format!("- {f}")).collect();
    lines.extend(fb.difference(&fa).map(|f| format!("+ {f}")));
    for name in a.files.keys().filter(|k| !b.files.contains_key(*k)) {
        lines.push(format!("- file {name}"));
    }
    for name in b.files.keys().filter(|k| !a.files.contains_key(*k)) {
        lines.push(format!("+ file {name}"));
    }
    if a.summary != b.summary {
        lines.push(format!(
            "summary: {:.3}/{:.3} vs {:.3}/{:.3}",
            a.summary.line_percent, a.summary.branch_percent, b.summary.line_percent, b.summary.branch_percent
        ));
    }
    ReportDiff { lines }
}
