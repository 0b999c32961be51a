//! Structural checker for code objects.
//!
//! Run after compilation, after probe insertion and after every elimination
//! batch. It never aborts: every problem found is returned as a violation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::code::{CodeObject, Const};
use crate::isa::{decode_all, BinOp, CmpOp, Decoded, Opcode, MAX_EXTENDED_ARGS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Function names from the root down to the offending code object.
    pub function: String,
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @{}: {}", self.function, self.offset, self.message)
    }
}

/// Checks `code` and all nested code objects.
pub fn verify(code: &CodeObject) -> Vec<Violation> {
    let mut out = Vec::new();
    verify_tree(code, &code.name, &mut out);
    out
}

fn verify_tree(code: &CodeObject, label: &str, out: &mut Vec<Violation>) {
    verify_one(code, label, out);
    for (_, child) in code.children() {
        verify_tree(child, &format!("{label}/{}", child.name), out);
    }
}

struct Checker<'a> {
    code: &'a CodeObject,
    function: &'a str,
    out: &'a mut Vec<Violation>,
}

impl Checker<'_> {
    fn report(&mut self, offset: usize, message: impl Into<String>) {
        self.out.push(Violation { function: self.function.to_string(), offset, message: message.into() });
    }
}

fn verify_one(code: &CodeObject, function: &str, out: &mut Vec<Violation>) {
    let mut c = Checker { code, function, out };
    if !code.code.len().is_multiple_of(2) {
        c.report(code.code.len(), "code length is not a whole number of units");
        return;
    }
    if code.code.is_empty() {
        c.report(0, "empty code");
        return;
    }
    let insns = match decode_all(&code.code) {
        Ok(insns) => insns,
        Err(e) => {
            c.report(0, format!("undecodable: {e}"));
            return;
        }
    };
    // instruction start (after prefixes) and whole-instruction start sets
    let mut by_start: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, d) in insns.iter().enumerate() {
        by_start.insert(d.offset, i);
    }
    // offsets that may not be entered: the PROBE of a probe sequence
    let mut probe_interior: HashSet<usize> = HashSet::new();

    for (i, d) in insns.iter().enumerate() {
        if d.prefixes() > MAX_EXTENDED_ARGS {
            c.report(d.offset, format!("{} EXTENDED_ARG prefixes", d.prefixes()));
        }
        match d.op {
            Opcode::LoadConst | Opcode::MatchLiteral | Opcode::ReturnConst | Opcode::Probe
                if d.arg as usize >= code.consts.len() =>
            {
                c.report(d.offset, format!("constant index {} out of range", d.arg));
            }
            Opcode::LoadName | Opcode::StoreName if d.arg as usize >= code.names.len() => {
                c.report(d.offset, format!("name index {} out of range", d.arg));
            }
            Opcode::BinaryOp if BinOp::from_arg(d.arg).is_none() => {
                c.report(d.offset, format!("unknown binary operator {}", d.arg));
            }
            Opcode::CompareOp if CmpOp::from_arg(d.arg).is_none() => {
                c.report(d.offset, format!("unknown comparison {}", d.arg));
            }
            _ => {}
        }
        if d.op == Opcode::Probe {
            probe_interior.insert(d.offset);
            if !matches!(code.consts.get(d.arg as usize), Some(Const::Probe(_))) {
                c.report(d.offset, "PROBE operand is not a probe handle");
            }
            let header = i.checked_sub(1).map(|h| &insns[h]);
            match header {
                Some(h) if matches!(h.op, Opcode::Nop | Opcode::JumpForward) && h.prefixes() == 0 => {
                    if h.arg as usize != d.units() {
                        c.report(h.offset, format!("probe header skips {} units, sequence has {}", h.arg, d.units()));
                    }
                }
                _ => c.report(d.offset, "PROBE without a NOP or JUMP_FORWARD header"),
            }
        }
    }

    let is_boundary = |off: usize| by_start.contains_key(&off);
    let enterable = |off: usize| by_start.contains_key(&off) && !probe_interior.contains(&off);

    for d in &insns {
        if let Some(t) = d.jump_target() {
            if !is_boundary(t) {
                c.report(d.offset, format!("jump target {t} not on boundary"));
            } else if probe_interior.contains(&t) {
                c.report(d.offset, format!("jump target {t} is inside a probe sequence"));
            }
        } else if d.op.is_jump() {
            c.report(d.offset, "backward jump before start of code");
        }
    }

    let mut prev: Option<usize> = None;
    for e in &code.line_table {
        if let Some(p) = prev {
            if e.start <= p {
                c.report(e.start, "line table offsets not strictly increasing");
            }
        }
        if !enterable(e.start) {
            c.report(e.start, "line table entry not on an instruction boundary");
        }
        prev = Some(e.start);
    }

    let len = code.code.len();
    for e in &code.exc_table {
        if !(e.start < e.end && e.end <= len) {
            c.report(e.start, format!("bad exception range {}..{}", e.start, e.end));
        }
        if !enterable(e.start) || !(e.end == len || enterable(e.end)) {
            c.report(e.start, "exception range not on instruction boundaries");
        }
        if !enterable(e.handler) {
            c.report(e.handler, "handler not on boundary");
        }
    }

    check_stack(&mut c, &insns, &by_start);
}

/// Stack effect of falling through (or, for jumps, of the taken edge).
fn effects(d: &Decoded) -> (u32, i64, Option<i64>) {
    // (needed depth, fallthrough delta, jump delta)
    let n = d.arg as i64;
    match d.op {
        Opcode::Nop | Opcode::ExtendedArg | Opcode::Probe => (0, 0, None),
        Opcode::LoadConst | Opcode::LoadName => (0, 1, None),
        Opcode::StoreName | Opcode::PopTop => (1, -1, None),
        Opcode::UnaryNeg | Opcode::UnaryNot => (1, 0, None),
        Opcode::BinaryOp | Opcode::CompareOp => (2, -1, None),
        Opcode::BuildTuple | Opcode::Print => (d.arg, 1 - n, None),
        Opcode::Call => (d.arg + 1, -n, None),
        Opcode::MakeFunction => (1, 0, None),
        Opcode::JumpForward | Opcode::JumpBackward => (0, 0, Some(0)),
        Opcode::PopJumpIfFalse => (1, -1, Some(-1)),
        Opcode::ReturnValue => (1, 0, None),
        Opcode::ReturnConst | Opcode::Raise => (0, 0, None),
        Opcode::GetRangeIter => (1, 0, None),
        Opcode::ForRangeNext => (1, 1, Some(-1)),
        Opcode::MatchLiteral => (1, 1, None),
    }
}

fn check_stack(c: &mut Checker<'_>, insns: &[Decoded], by_start: &BTreeMap<usize, usize>) {
    let mut depth_at: Vec<Option<i64>> = vec![None; insns.len()];
    let mut work: Vec<(usize, i64)> = vec![(0, 0)];
    let mut reported_conflicts = HashSet::new();
    for e in &c.code.exc_table {
        if let Some(&i) = by_start.get(&e.handler) {
            work.push((i, e.depth as i64));
        }
    }
    while let Some((i, depth)) = work.pop() {
        if let Some(seen) = depth_at[i] {
            if seen != depth && reported_conflicts.insert(i) {
                c.report(insns[i].offset, format!("stack depth {depth} conflicts with {seen}"));
            }
            continue;
        }
        depth_at[i] = Some(depth);
        let d = &insns[i];
        let (need, fall, jump) = effects(d);
        if depth < need as i64 {
            c.report(d.offset, format!("stack underflow in {}", d.op));
            continue;
        }
        match d.op {
            Opcode::ReturnValue if depth != 1 => {
                c.report(d.offset, format!("return with {depth} values on the stack"));
            }
            Opcode::ReturnConst if depth != 0 => {
                c.report(d.offset, format!("return with {depth} values on the stack"));
            }
            _ => {}
        }
        if let (Some(delta), Some(t)) = (jump, d.jump_target()) {
            if let Some(&ti) = by_start.get(&t) {
                work.push((ti, depth + delta));
            }
        }
        let falls_through = !d.op.is_terminal() && !matches!(d.op, Opcode::JumpForward | Opcode::JumpBackward);
        if falls_through {
            if i + 1 < insns.len() {
                work.push((i + 1, depth + fall));
            } else {
                c.report(d.offset, "control falls off the end of the code");
            }
        }
    }
}

/// Formats violations one per line.
pub fn describe(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n")
}
