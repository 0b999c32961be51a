//! Probe coverage against the tracing collector and the tree-walking oracle.

mod common;

use std::path::Path;

use common::oracle::Outcome;
use common::*;
use decov::engine::EngineConfig;
use decov::run::CoverageMode;
use decov::vm::ExitStatus;

fn check(path: &Path) {
    let name = path.display();
    let expected = oracle_run(path);
    let universe = {
        let src = std::fs::read_to_string(path).unwrap();
        oracle::line_universe(&decov::frontend::parse(&src, "x").unwrap())
    };

    let (plain, plain_out) = run(path, &options(CoverageMode::None, false, EngineConfig::default()));
    assert_eq!(plain_out, expected.stdout, "{name}: stdout");
    match (&plain.status, &expected.outcome) {
        (ExitStatus::Ok, Outcome::Ok) => {}
        (ExitStatus::Uncaught(e), Outcome::Uncaught(k)) => assert_eq!(e.kind, *k, "{name}: exception kind"),
        (got, want) => panic!("{name}: status {got:?}, oracle {want:?}"),
    }

    let (traced, _) = run(path, &options(CoverageMode::TraceCov, true, EngineConfig::default()));
    assert_eq!(executed_lines(&traced), expected.lines, "{name}: traced lines");

    for t in THRESHOLDS {
        let (probed, out) = run(path, &options(CoverageMode::Probe, true, probe(t)));
        assert_eq!(out, expected.stdout, "{name}: stdout under probes, T={t}");
        assert_eq!(executed_lines(&probed), expected.lines, "{name}: probe lines, T={t}");
        assert_eq!(executed_branches(&probed), expected.branches, "{name}: probe branches, T={t}");
        let f = probed.report.as_ref().unwrap().files.values().next().unwrap();
        let all: std::collections::BTreeSet<u32> =
            f.executed_lines.iter().chain(&f.missing_lines).copied().collect();
        assert_eq!(all, universe, "{name}: line universe");
    }
}

#[test]
fn corpus_matches_oracle() {
    for path in corpus() {
        check(&path);
    }
}

#[test]
fn fuzz_programs_match_oracle() {
    let dir = tempfile::tempdir().unwrap();
    for path in fuzz_files(dir.path(), FUZZ_PROGRAMS) {
        check(&path);
    }
}

