//! Static-phase probe insertion.
//!
//! A probe is `NOP skip; [EXTENDED_ARG...] PROBE k`, where constant `k` holds
//! the probe's [`ProbeHandle`] and `skip` is the size in code units of the
//! `PROBE` instruction. While the header is a `NOP` the probe fires; turning
//! the header into `JUMP_FORWARD skip` removes it without moving a byte.
//!
//! Inserting code shifts everything after it, so jumps are re-resolved by
//! [`relocate`], which hands the instruction stream to the label assembler
//! and lets it re-run operand widths to a fixpoint.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::asm::{Assembler, Label, LayoutError};
use crate::code::{CodeObject, Const, ExcEntry, LineEntry, ProbeHandle};
use crate::frontend::ast::BRANCH_NAME;
use crate::frontend::CoverableUniverse;
use crate::isa::{decode_all, prefixes_for, DecodeError, Decoded, Opcode, UNIT};
use crate::verify::{self, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrumentMode {
    Line,
    LineBranch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Payload {
    Line(u32),
    Branch(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSite {
    pub id: u32,
    pub payload: Payload,
    /// Constant indices leading from the root code object to the owner.
    pub path: Vec<u32>,
    /// Byte offset of the probe's header.
    pub offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstrumentationMap {
    /// Sites ordered by id; ids are consecutive.
    pub sites: Vec<ProbeSite>,
    /// Largest number of layout passes any code object needed.
    pub max_iterations: u32,
}

impl InstrumentationMap {
    pub fn first_id(&self) -> Option<u32> {
        self.sites.first().map(|s| s.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("{function}: {source}")]
    Layout { function: String, source: LayoutError },
    #[error("{function}: {source}")]
    Decode { function: String, source: DecodeError },
    #[error("{function}: jump at {offset} does not land on an instruction")]
    BadTarget { function: String, offset: usize },
    #[error("rewritten code failed verification:\n{}", verify::describe(.0))]
    Verify(Vec<Violation>),
}

/// One change to an instruction stream: at byte `at`, drop the `remove`
/// bytes of whole instructions found there and put `insert` in front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edit {
    pub at: usize,
    pub remove: usize,
    pub insert: Vec<(Opcode, u32)>,
}

#[derive(Debug, Clone)]
pub struct Relocation {
    pub code: Vec<u8>,
    pub iterations: u32,
    orig_offsets: Vec<usize>,
    /// Unit offset of what now stands where each original instruction (and
    /// the end) was: the first inserted instruction, else the instruction
    /// itself, else the next surviving one.
    new_units: Vec<u32>,
    /// Byte offsets of the inserted instructions, per edit.
    pub inserted: Vec<Vec<usize>>,
}

impl Relocation {
    /// New byte offset for an original instruction boundary (or the end).
    pub fn map_offset(&self, orig: usize) -> usize {
        let i = self.orig_offsets.partition_point(|&o| o < orig);
        self.new_units[i] as usize * UNIT
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelocateError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("jump at {0} does not land on an instruction")]
    BadTarget(usize),
    #[error("edit at {0} is not on an instruction boundary or out of order")]
    BadEdit(usize),
}

/// Applies `edits` (sorted by offset) and re-resolves every jump so it lands
/// on the same instruction as before, or on code inserted in front of it.
/// Existing instructions never get narrower.
pub fn relocate(code: &[u8], edits: &[Edit]) -> Result<Relocation, RelocateError> {
    let insns = decode_all(code)?;
    let orig_offsets: Vec<usize> = insns.iter().map(|d| d.offset).collect();
    let index_of = |off: usize| -> Option<usize> {
        if off == code.len() {
            return Some(insns.len());
        }
        orig_offsets.binary_search(&off).ok()
    };

    let mut asm = Assembler::new();
    // labels only for instructions some jump lands on
    let mut labels: HashMap<usize, Label> = HashMap::new();
    for d in &insns {
        if let Some(t) = d.jump_target() {
            let ti = index_of(t).ok_or(RelocateError::BadTarget(d.offset))?;
            labels.entry(ti).or_insert_with(|| asm.new_label());
        } else if d.op.is_jump() {
            return Err(RelocateError::BadTarget(d.offset));
        }
    }

    let mut first_item: Vec<u32> = Vec::with_capacity(insns.len() + 1);
    let mut edit_items: Vec<Vec<usize>> = vec![Vec::new(); edits.len()];
    let mut next_edit = 0;
    let mut removed_until = 0usize;
    let mut prev_at = 0usize;
    for i in 0..=insns.len() {
        let off = if i < insns.len() { insns[i].offset } else { code.len() };
        first_item.push(asm.len() as u32);
        if let Some(&l) = labels.get(&i) {
            asm.bind(l);
        }
        while next_edit < edits.len() && edits[next_edit].at == off {
            let e = &edits[next_edit];
            for &(op, arg) in &e.insert {
                edit_items[next_edit].push(asm.emit(op, arg, 0));
            }
            removed_until = removed_until.max(off + e.remove);
            prev_at = off;
            next_edit += 1;
        }
        if next_edit < edits.len() && (edits[next_edit].at < off || edits[next_edit].at < prev_at) {
            return Err(RelocateError::BadEdit(edits[next_edit].at));
        }
        if i == insns.len() || off < removed_until {
            continue;
        }
        let d = &insns[i];
        match d.jump_target() {
            Some(t) => {
                let l = labels[&index_of(t).expect("checked above")];
                asm.emit_jump_padded(d.op, l, d.units() as u8, 0);
            }
            None => {
                asm.emit_padded(d.op, d.arg, d.units() as u8, 0);
            }
        }
    }
    if next_edit < edits.len() || removed_until > code.len() {
        return Err(RelocateError::BadEdit(edits.get(next_edit).map_or(removed_until, |e| e.at)));
    }

    let layout = asm.layout()?;
    let new_units = first_item.iter().map(|&it| layout.unit_offsets[it as usize]).collect();
    let inserted = edit_items
        .iter()
        .map(|items| items.iter().map(|&it| layout.item_offset(it)).collect())
        .collect();
    Ok(Relocation { code: layout.code, iterations: layout.iterations, orig_offsets, new_units, inserted })
}

/// Rebuilds the line and exception tables of `code` for relocated bytes.
fn remap_tables(code: &CodeObject, reloc: &Relocation) -> (Vec<LineEntry>, Vec<ExcEntry>) {
    let mut lines: Vec<LineEntry> = Vec::with_capacity(code.line_table.len());
    for e in &code.line_table {
        let start = reloc.map_offset(e.start);
        if let Some(last) = lines.last_mut() {
            if last.start == start {
                // the earlier entry lost all of its code
                *last = LineEntry { start, line: e.line };
                continue;
            }
        }
        lines.push(LineEntry { start, line: e.line });
    }
    while lines.last().is_some_and(|e| e.start >= reloc.code.len()) {
        lines.pop();
    }
    let exc = code
        .exc_table
        .iter()
        .map(|e| ExcEntry {
            start: reloc.map_offset(e.start),
            end: reloc.map_offset(e.end),
            handler: reloc.map_offset(e.handler),
            depth: e.depth,
        })
        .filter(|e| e.start < e.end)
        .collect();
    (lines, exc)
}

/// Finds `LOAD_CONST (o, d); STORE_NAME _branch` pairs: (index of the load,
/// payload, byte length of the pair).
fn find_markers(code: &CodeObject, insns: &[Decoded]) -> Vec<(usize, (u32, u32), usize)> {
    let Some(branch) = code.names.iter().position(|n| &**n == BRANCH_NAME) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, w) in insns.windows(2).enumerate() {
        if w[0].op == Opcode::LoadConst && w[1].op == Opcode::StoreName && w[1].arg as usize == branch {
            if let Some(pair) = code.consts.get(w[0].arg as usize).and_then(Const::as_marker_pair) {
                out.push((i, pair, w[0].len + w[1].len));
            }
        }
    }
    out
}

struct Planned {
    edit: Edit,
    /// Probes introduced by this edit, in order.
    probes: Vec<(u32, Payload)>,
}

/// Produces the edits for one code object.
type Planner<'p> = dyn FnMut(&CodeObject, &[Decoded], &mut Vec<Const>) -> Vec<Planned> + 'p;

/// Rewrites every code object in the tree, children first. `plan` returns
/// the edits for one node given its (already updated) constants table.
fn rewrite_tree(
    code: &Arc<CodeObject>,
    path: &mut Vec<u32>,
    plan: &mut Planner<'_>,
    sites: &mut Vec<ProbeSite>,
    max_iterations: &mut u32,
) -> Result<Arc<CodeObject>, InstrumentError> {
    let mut consts = code.consts.clone();
    for (idx, child) in code.children() {
        path.push(idx as u32);
        let new_child = rewrite_tree(child, path, plan, sites, max_iterations)?;
        path.pop();
        consts[idx] = Const::Code(new_child);
    }
    let insns = decode_all(&code.code)
        .map_err(|source| InstrumentError::Decode { function: code.name.clone(), source })?;
    let planned = plan(code, &insns, &mut consts);
    let edits: Vec<Edit> = planned.iter().map(|p| p.edit.clone()).collect();
    let reloc = relocate(&code.code, &edits).map_err(|e| match e {
        RelocateError::Layout(source) => InstrumentError::Layout { function: code.name.clone(), source },
        RelocateError::Decode(source) => InstrumentError::Decode { function: code.name.clone(), source },
        RelocateError::BadTarget(offset) | RelocateError::BadEdit(offset) => {
            InstrumentError::BadTarget { function: code.name.clone(), offset }
        }
    })?;
    *max_iterations = (*max_iterations).max(reloc.iterations);
    for (p, offsets) in planned.iter().zip(&reloc.inserted) {
        // each probe is two inserted instructions: header, then PROBE
        for (k, &(id, payload)) in p.probes.iter().enumerate() {
            sites.push(ProbeSite { id, payload, path: path.clone(), offset: offsets[2 * k] });
        }
    }
    let (line_table, exc_table) = remap_tables(code, &reloc);
    Ok(Arc::new(CodeObject {
        name: code.name.clone(),
        source: code.source.clone(),
        first_line: code.first_line,
        arg_count: code.arg_count,
        code: reloc.code,
        consts,
        names: code.names.clone(),
        line_table,
        exc_table,
    }))
}

fn probe_insns(consts: &mut Vec<Const>, id: u32) -> [(Opcode, u32); 2] {
    consts.push(Const::Probe(ProbeHandle(id)));
    let k = consts.len() as u32 - 1;
    let units = 1 + prefixes_for(k) as u32;
    [(Opcode::Nop, units), (Opcode::Probe, k)]
}

/// Inserts a line probe at the start of every line-table entry whose line is
/// coverable and, in branch mode, swaps every marker idiom for a branch probe
/// (in line mode markers are simply removed). Probe ids are handed out from
/// `first_id` upward, children before parents.
pub fn insert_probes(
    code: &Arc<CodeObject>,
    universe: &CoverableUniverse,
    mode: InstrumentMode,
    first_id: u32,
) -> Result<(Arc<CodeObject>, InstrumentationMap), InstrumentError> {
    let mut next_id = first_id;
    let mut plan = |node: &CodeObject, insns: &[Decoded], consts: &mut Vec<Const>| -> Vec<Planned> {
        let markers = find_markers(node, insns);
        let line_starts: BTreeSet<usize> = node
            .line_table
            .iter()
            .filter(|e| e.line != 0 && universe.lines.contains(&e.line))
            .map(|e| e.start)
            .collect();
        let marker_at: HashMap<usize, ((u32, u32), usize)> =
            markers.iter().map(|&(i, pair, len)| (insns[i].offset, (pair, len))).collect();
        let mut points: BTreeSet<usize> = line_starts.clone();
        points.extend(marker_at.keys());

        let mut planned = Vec::new();
        for at in points {
            let mut edit = Edit { at, remove: 0, insert: Vec::new() };
            let mut probes = Vec::new();
            if line_starts.contains(&at) {
                let line = node.line_at(at);
                edit.insert.extend(probe_insns(consts, next_id));
                probes.push((next_id, Payload::Line(line)));
                next_id += 1;
            }
            if let Some(&((o, d), len)) = marker_at.get(&at) {
                edit.remove = len;
                if mode == InstrumentMode::LineBranch {
                    edit.insert.extend(probe_insns(consts, next_id));
                    probes.push((next_id, Payload::Branch(o, d)));
                    next_id += 1;
                }
            }
            planned.push(Planned { edit, probes });
        }
        planned
    };
    let mut sites = Vec::new();
    let mut max_iterations = 0;
    let new = rewrite_tree(code, &mut Vec::new(), &mut plan, &mut sites, &mut max_iterations)?;
    let violations = verify::verify(&new);
    if !violations.is_empty() {
        return Err(InstrumentError::Verify(violations));
    }
    sites.sort_by_key(|s| s.id);
    Ok((new, InstrumentationMap { sites, max_iterations }))
}

/// Removes every marker idiom, leaving the rest of the code as it was.
pub fn strip_markers(code: &Arc<CodeObject>) -> Result<Arc<CodeObject>, InstrumentError> {
    let mut plan = |node: &CodeObject, insns: &[Decoded], _: &mut Vec<Const>| -> Vec<Planned> {
        find_markers(node, insns)
            .into_iter()
            .map(|(i, _, len)| Planned {
                edit: Edit { at: insns[i].offset, remove: len, insert: Vec::new() },
                probes: Vec::new(),
            })
            .collect()
    };
    let new = rewrite_tree(code, &mut Vec::new(), &mut plan, &mut Vec::new(), &mut 0)?;
    let violations = verify::verify(&new);
    if !violations.is_empty() {
        return Err(InstrumentError::Verify(violations));
    }
    Ok(new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::compile;
    use crate::frontend::{enumerate_universe, parse};
    use crate::isa::{decode_at, encode};
    use crate::transform::transform;

    fn build(src: &str) -> (Arc<CodeObject>, CoverableUniverse) {
        let m = transform(parse(src, "t.mini").unwrap());
        (compile(&m).unwrap(), enumerate_universe(&m))
    }

    fn cat(parts: &[Vec<u8>]) -> Vec<u8> {
        parts.concat()
    }

    #[test]
    fn insertion_before_forward_jump_keeps_span() {
        // JUMP_FORWARD 10 over ten NOPs; inserting one unit before the jump
        // leaves the span alone since the inserted unit is not inside it.
        let mut parts = vec![encode(Opcode::JumpForward, 10)];
        parts.extend((0..10).map(|_| encode(Opcode::Nop, 0)));
        parts.push(encode(Opcode::ReturnConst, 0));
        let code = cat(&parts);
        let r = relocate(&code, &[Edit { at: 0, remove: 0, insert: vec![(Opcode::Nop, 0)] }]).unwrap();
        let j = decode_at(&r.code, 2).unwrap();
        assert_eq!((j.op, j.arg), (Opcode::JumpForward, 10));
        // inside the span the jump grows by one unit
        let r = relocate(&code, &[Edit { at: 4, remove: 0, insert: vec![(Opcode::Nop, 0)] }]).unwrap();
        assert_eq!(decode_at(&r.code, 0).unwrap().arg, 11);
        assert_eq!(r.map_offset(4), 4);
        assert_eq!(r.map_offset(6), 8);
    }

    #[test]
    fn widening_shifts_later_code() {
        let mut parts = vec![encode(Opcode::JumpForward, 0xFF)];
        parts.extend((0..0xFF).map(|_| encode(Opcode::Nop, 0)));
        parts.push(encode(Opcode::ReturnConst, 0));
        let code = cat(&parts);
        let r = relocate(&code, &[Edit { at: 2, remove: 0, insert: vec![(Opcode::Nop, 0)] }]).unwrap();
        let j = decode_at(&r.code, 0).unwrap();
        assert_eq!(j.prefixes(), 1);
        assert_eq!(j.arg, 0x100);
        assert_eq!(j.jump_target(), Some(r.map_offset(code.len() - 2)));
        assert_eq!(r.map_offset(2), 4);
    }

    #[test]
    fn backward_span_grows_by_inserted_units() {
        let code = cat(&[
            encode(Opcode::Nop, 0),
            encode(Opcode::Nop, 0),
            encode(Opcode::JumpBackward, 3),
        ]);
        let edits = vec![
            Edit { at: 0, remove: 0, insert: vec![(Opcode::Nop, 0)] },
            Edit { at: 2, remove: 0, insert: vec![(Opcode::Nop, 0), (Opcode::Nop, 0)] },
        ];
        let r = relocate(&code, &edits).unwrap();
        let j = decode_at(&r.code, 10).unwrap();
        assert_eq!(j.arg, 6);
        assert_eq!(j.jump_target(), Some(0));
    }

    #[test]
    fn function_probes_sit_before_lines_and_arms() {
        let (code, u) = build("def f(x) {\n  if x {\n    return 1\n  }\n  return 2\n}\n");
        let (new, map) = insert_probes(&code, &u, InstrumentMode::LineBranch, 0).unwrap();
        let f_sites: Vec<Payload> = map.sites.iter().filter(|s| s.path == vec![0]).map(|s| s.payload).collect();
        assert_eq!(
            f_sites,
            vec![
                Payload::Line(2),
                Payload::Branch(2, 3),
                Payload::Line(3),
                Payload::Line(2),
                Payload::Branch(2, 5),
                Payload::Line(5),
            ]
        );
        for s in &map.sites {
            let owner = new.descendant(&s.path).unwrap();
            let header = decode_at(&owner.code, s.offset).unwrap();
            let probe = decode_at(&owner.code, header.end()).unwrap();
            assert_eq!(header.op, Opcode::Nop);
            assert_eq!(probe.op, Opcode::Probe);
            assert_eq!(header.arg as usize, probe.units());
            assert_eq!(owner.consts[probe.arg as usize], Const::Probe(ProbeHandle(s.id)));
        }
    }

    #[test]
    fn single_pass_line_gets_one_probe() {
        let (code, u) = build("pass");
        let (_, map) = insert_probes(&code, &u, InstrumentMode::LineBranch, 0).unwrap();
        assert_eq!(map.sites.len(), 1);
        assert_eq!(map.sites[0].payload, Payload::Line(1));
    }

    #[test]
    fn line_mode_drops_markers() {
        let (code, u) = build("if x == 0 {\n  x = 1\n} else {\n  x = 2\n}\n");
        let (new, map) = insert_probes(&code, &u, InstrumentMode::Line, 0).unwrap();
        assert!(map.sites.iter().all(|s| matches!(s.payload, Payload::Line(_))));
        assert!(find_markers(&new, &decode_all(&new.code).unwrap()).is_empty());
        let stripped = strip_markers(&code).unwrap();
        assert!(find_markers(&stripped, &decode_all(&stripped.code).unwrap()).is_empty());
        assert!(verify::verify(&stripped).is_empty());
    }

    #[test]
    fn empty_code_strip_is_identity() {
        let (code, _) = build("x = 1");
        assert_eq!(*strip_markers(&code).unwrap(), *code);
    }

    #[test]
    fn lines_keep_their_instructions() {
        let (code, u) = build("x = 0\nwhile x < 3 {\n  x = x + 1\n}\ny = x\n");
        let (new, _) = insert_probes(&code, &u, InstrumentMode::LineBranch, 0).unwrap();
        let lines = |c: &CodeObject| -> BTreeSet<u32> { c.line_table.iter().map(|e| e.line).collect() };
        assert_eq!(lines(&code), lines(&new));
        // every original non-marker instruction keeps its line
        let old_ops: Vec<(Opcode, u32)> = decode_all(&code.code)
            .unwrap()
            .iter()
            .filter(|d| d.op != Opcode::LoadConst || code.consts[d.arg as usize].as_marker_pair().is_none())
            .filter(|d| !(d.op == Opcode::StoreName && &*code.names[d.arg as usize] == BRANCH_NAME))
            .map(|d| (d.op, code.line_at(d.offset)))
            .collect();
        let new_ops: Vec<(Opcode, u32)> = decode_all(&new.code)
            .unwrap()
            .iter()
            .filter(|d| d.op != Opcode::Probe && !(d.op == Opcode::Nop && d.arg > 0))
            .map(|d| (d.op, new.line_at(d.offset)))
            .collect();
        assert_eq!(old_ops, new_ops);
    }
}
