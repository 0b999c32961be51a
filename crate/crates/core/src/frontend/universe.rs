//! The set of lines and branches a report measures against.

use std::collections::BTreeSet;

use super::ast::*;

/// Coverable lines and branches of one source file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverableUniverse {
    pub file: String,
    pub lines: BTreeSet<u32>,
    pub branches: BTreeSet<(u32, u32)>,
}

impl CoverableUniverse {
    pub fn is_empty(&self) -> bool {
        self.lines.is_empty() && self.branches.is_empty()
    }
}

/// Collects every line holding a non-synthetic statement (case and except
/// headers count, since they compile to code of their own) and the
/// `(origin, dest)` payload of every branch marker.
///
/// Expects a transformed module; on untransformed input the branch set is
/// simply empty.
pub fn enumerate_universe(module: &Module) -> CoverableUniverse {
    let mut u = CoverableUniverse { file: module.file.clone(), ..Default::default() };
    walk(&module.body, &mut u);
    u
}

fn walk(block: &Block, u: &mut CoverableUniverse) {
    for stmt in block {
        if let StmtKind::BranchMarker { origin, dest } = stmt.kind {
            u.branches.insert((origin, dest));
            continue;
        }
        if !stmt.synthetic {
            u.lines.insert(stmt.line);
        }
        match &stmt.kind {
            StmtKind::If { body, orelse, .. }
            | StmtKind::While { body, orelse, .. }
            | StmtKind::ForRange { body, orelse, .. } => {
                walk(body, u);
                walk(orelse, u);
            }
            StmtKind::Match { cases, .. } => {
                for case in cases {
                    if !case.synthetic {
                        u.lines.insert(case.line);
                    }
                    walk(&case.body, u);
                }
            }
            StmtKind::Def { body, .. } => walk(body, u),
            StmtKind::Try { body, handler } => {
                walk(body, u);
                u.lines.insert(handler.line);
                walk(&handler.body, u);
            }
            _ => {}
        }
    }
}
