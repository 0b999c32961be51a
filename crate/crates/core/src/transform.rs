//! Makes every branch of the program explicit in the syntax tree.
//!
//! Two passes. [`split_critical_edges`] gives every `if`/`while`/`for` an
//! `else` arm and every `match` a wildcard case, so each way out of a
//! branching construct has a block of its own. [`demarcate_branches`] then
//! puts a `_branch = (origin, dest)` marker at the head of every arm, which
//! the compiler turns into a recognizable two-instruction idiom.

use crate::frontend::ast::*;

/// Parser output in, fully transformed tree out.
pub fn transform(module: Module) -> Module {
    demarcate_branches(split_critical_edges(module))
}

pub fn split_critical_edges(mut module: Module) -> Module {
    split_block(&mut module.body);
    module
}

fn synthetic_pass(line: u32) -> Block {
    vec![Stmt::synthetic(StmtKind::Pass, line)]
}

fn split_block(block: &mut Block) {
    for stmt in block.iter_mut() {
        let line = stmt.line;
        match &mut stmt.kind {
            StmtKind::If { body, orelse, .. }
            | StmtKind::While { body, orelse, .. }
            | StmtKind::ForRange { body, orelse, .. } => {
                split_block(body);
                if orelse.is_empty() {
                    *orelse = synthetic_pass(line);
                } else {
                    split_block(orelse);
                }
            }
            StmtKind::Match { cases, .. } => {
                for case in cases.iter_mut() {
                    split_block(&mut case.body);
                }
                if !cases.iter().any(|c| c.pattern == Pattern::Wildcard) {
                    cases.push(Case { pattern: Pattern::Wildcard, body: synthetic_pass(line), line, synthetic: true });
                }
            }
            StmtKind::Def { body, .. } => split_block(body),
            StmtKind::Try { body, handler } => {
                split_block(body);
                split_block(&mut handler.body);
            }
            _ => {}
        }
    }
}

/// Inserts the markers. The destination of an arm is the line of its first
/// real statement; an arm holding only a synthetic `pass` leads wherever
/// control goes after the construct: the next statement of the enclosing
/// block, the header of an enclosing loop when the construct ends a loop
/// body, or the continuation of an enclosing arm. A construct that ends a
/// function or module has nowhere to go and uses its own line.
pub fn demarcate_branches(mut module: Module) -> Module {
    demarcate_block(&mut module.body, None);
    module
}

fn arm_dest(arm: &Block, continuation: u32) -> u32 {
    match arm.first() {
        Some(s) if !s.synthetic => s.line,
        _ => continuation,
    }
}

fn add_marker(arm: &mut Block, origin: u32, dest: u32) {
    arm.insert(0, Stmt::synthetic(StmtKind::BranchMarker { origin, dest }, origin));
}

fn demarcate_block(block: &mut Block, block_end: Option<u32>) {
    let next_lines: Vec<Option<u32>> =
        (0..block.len()).map(|i| block.get(i + 1).map(|s| s.line).or(block_end)).collect();
    for (stmt, after) in block.iter_mut().zip(next_lines) {
        let origin = stmt.line;
        let cont = after.unwrap_or(origin);
        match &mut stmt.kind {
            StmtKind::If { body, orelse, .. } => {
                let (then_dest, else_dest) = (arm_dest(body, cont), arm_dest(orelse, cont));
                demarcate_block(body, after);
                demarcate_block(orelse, after);
                add_marker(body, origin, then_dest);
                add_marker(orelse, origin, else_dest);
            }
            StmtKind::While { body, orelse, .. } | StmtKind::ForRange { body, orelse, .. } => {
                let (body_dest, else_dest) = (arm_dest(body, cont), arm_dest(orelse, cont));
                demarcate_block(body, Some(origin));
                demarcate_block(orelse, after);
                add_marker(body, origin, body_dest);
                add_marker(orelse, origin, else_dest);
            }
            StmtKind::Match { cases, .. } => {
                for case in cases.iter_mut() {
                    let dest = arm_dest(&case.body, cont);
                    demarcate_block(&mut case.body, after);
                    add_marker(&mut case.body, origin, dest);
                }
            }
            StmtKind::Def { body, .. } => demarcate_block(body, None),
            StmtKind::Try { body, handler } => {
                demarcate_block(body, after);
                demarcate_block(&mut handler.body, after);
            }
            _ => {}
        }
    }
}

/// Checks that no branching construct has an implicit arm. Returns a
/// description of the first offender.
pub fn check_arms_explicit(module: &Module) -> Result<(), String> {
    fn block(b: &Block) -> Result<(), String> {
        b.iter().try_for_each(stmt)
    }
    fn stmt(s: &Stmt) -> Result<(), String> {
        let marked = |arm: &Block| matches!(arm.first(), Some(Stmt { kind: StmtKind::BranchMarker { .. }, .. }));
        match &s.kind {
            StmtKind::If { body, orelse, .. }
            | StmtKind::While { body, orelse, .. }
            | StmtKind::ForRange { body, orelse, .. } => {
                if !marked(body) || !marked(orelse) {
                    return Err(format!("construct at line {} has an unmarked arm", s.line));
                }
                block(body)?;
                block(orelse)
            }
            StmtKind::Match { cases, .. } => {
                if !cases.iter().any(|c| c.pattern == Pattern::Wildcard) {
                    return Err(format!("match at line {} has no wildcard", s.line));
                }
                for c in cases {
                    if !marked(&c.body) {
                        return Err(format!("case at line {} is unmarked", c.line));
                    }
                    block(&c.body)?;
                }
                Ok(())
            }
            StmtKind::Def { body, .. } => block(body),
            StmtKind::Try { body, handler } => {
                block(body)?;
                block(&handler.body)
            }
            _ => Ok(()),
        }
    }
    block(&module.body)
}
