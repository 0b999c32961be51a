//! Label-based instruction layout.
//!
//! Both the compiler and the probe inserter produce a flat list of
//! instructions whose jumps refer to labels. Laying the list out means picking
//! an operand width for every jump: a wider jump moves everything after it,
//! which can push another jump's span over an `EXTENDED_ARG` boundary, so the
//! widths are recomputed until nothing changes. Widths only grow and are
//! capped at four units, so the loop converges; it is still bounded by
//! [`MAX_LAYOUT_ITERATIONS`] as a guard against invariant breaches.

use thiserror::Error;

use crate::code::LineEntry;
use crate::isa::{self, JumpKind, Opcode, MAX_EXTENDED_ARGS, UNIT};

pub const MAX_LAYOUT_ITERATIONS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Label(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsmInsn {
    pub op: Opcode,
    /// Immediate operand, or the label id for jumps.
    pub arg: u32,
    /// Lower bound on the encoded width in units (keeps existing padding).
    pub min_units: u8,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("jump at item {item} spans {span} units, more than three EXTENDED_ARGs can encode")]
    SpanOverflow { item: usize, span: u64 },
    #[error("{op} at item {item} points the wrong way")]
    WrongDirection { item: usize, op: Opcode },
    #[error("label {0} was never bound")]
    UnboundLabel(u32),
    #[error("jump widths did not settle after {0} iterations")]
    NoFixpoint(u32),
}

#[derive(Debug, Default, Clone)]
pub struct Assembler {
    items: Vec<AsmInsn>,
    /// Item index each label is bound to (`items.len()` binds to the end).
    labels: Vec<Option<u32>>,
}

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[AsmInsn] {
        &self.items
    }

    pub fn new_label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() as u32 - 1)
    }

    /// Binds `label` to the next emitted instruction.
    pub fn bind(&mut self, label: Label) {
        self.labels[label.0 as usize] = Some(self.items.len() as u32);
    }

    pub fn label_item(&self, label: Label) -> Option<usize> {
        self.labels[label.0 as usize].map(|i| i as usize)
    }

    pub fn emit(&mut self, op: Opcode, arg: u32, line: u32) -> usize {
        self.emit_padded(op, arg, 1, line)
    }

    pub fn emit_padded(&mut self, op: Opcode, arg: u32, min_units: u8, line: u32) -> usize {
        debug_assert!(!op.is_jump(), "use emit_jump for {op}");
        self.items.push(AsmInsn { op, arg, min_units, line });
        self.items.len() - 1
    }

    pub fn emit_jump(&mut self, op: Opcode, target: Label, line: u32) -> usize {
        self.emit_jump_padded(op, target, 1, line)
    }

    pub fn emit_jump_padded(&mut self, op: Opcode, target: Label, min_units: u8, line: u32) -> usize {
        debug_assert!(op.is_jump());
        self.items.push(AsmInsn { op, arg: target.0, min_units, line });
        self.items.len() - 1
    }

    /// Item indices that some label is bound to.
    pub fn label_targets(&self) -> Vec<bool> {
        let mut marks = vec![false; self.items.len() + 1];
        for idx in self.labels.iter().flatten() {
            marks[*idx as usize] = true;
        }
        marks
    }

    /// Assigns operand widths to a fixpoint and encodes the result.
    pub fn layout(&self) -> Result<Layout, LayoutError> {
        let n = self.items.len();
        let mut widths: Vec<u8> = self
            .items
            .iter()
            .map(|insn| {
                let natural = if insn.op.is_jump() { 1 } else { 1 + isa::prefixes_for(insn.arg) as u8 };
                natural.max(insn.min_units)
            })
            .collect();
        let label_items: Vec<u32> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or(LayoutError::UnboundLabel(i as u32)))
            .collect::<Result<_, _>>()?;

        // unit offset of every item, plus one trailing entry for the end
        let mut offsets: Vec<u32> = vec![0; n + 1];
        let mut iterations = 0;
        loop {
            iterations += 1;
            let mut acc: u64 = 0;
            for i in 0..n {
                offsets[i] = acc as u32;
                acc += widths[i] as u64;
            }
            offsets[n] = acc as u32;

            let mut changed = false;
            for (i, insn) in self.items.iter().enumerate() {
                let Some(kind) = insn.op.jump_kind() else { continue };
                let span = jump_span(&offsets, &label_items, i, widths[i], insn, kind)?;
                let needed = 1 + isa::prefixes_for(span) as u8;
                if needed > widths[i] {
                    widths[i] = needed;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            if iterations >= MAX_LAYOUT_ITERATIONS {
                return Err(LayoutError::NoFixpoint(iterations));
            }
        }

        let mut code = Vec::with_capacity(offsets[n] as usize * UNIT);
        for (i, insn) in self.items.iter().enumerate() {
            let arg = match insn.op.jump_kind() {
                Some(kind) => jump_span(&offsets, &label_items, i, widths[i], insn, kind)?,
                None => insn.arg,
            };
            isa::encode_into(&mut code, insn.op, arg, widths[i] as usize);
        }
        let label_offsets = label_items.iter().map(|&it| offsets[it as usize]).collect();
        Ok(Layout { code, unit_offsets: offsets, label_offsets, iterations })
    }

    /// Line table for a layout of this assembler: a new entry wherever the
    /// line changes or a label lands.
    pub fn line_table(&self, layout: &Layout, extra_boundaries: &[usize]) -> Vec<LineEntry> {
        let mut boundary = self.label_targets();
        for &b in extra_boundaries {
            boundary[b] = true;
        }
        let mut table: Vec<LineEntry> = Vec::new();
        let mut prev: Option<u32> = None;
        for (i, insn) in self.items.iter().enumerate() {
            if prev != Some(insn.line) || boundary[i] {
                table.push(LineEntry { start: layout.item_offset(i), line: insn.line });
                prev = Some(insn.line);
            }
        }
        table
    }
}

fn jump_span(
    offsets: &[u32],
    label_items: &[u32],
    item: usize,
    width: u8,
    insn: &AsmInsn,
    kind: JumpKind,
) -> Result<u32, LayoutError> {
    let next = offsets[item] as i64 + width as i64;
    let target = offsets[label_items[insn.arg as usize] as usize] as i64;
    let span = match kind {
        JumpKind::Forward => target - next,
        JumpKind::Backward => next - target,
    };
    if span < 0 {
        return Err(LayoutError::WrongDirection { item, op: insn.op });
    }
    let limit = (1u64 << (8 * (MAX_EXTENDED_ARGS + 1))) - 1;
    if span as u64 > limit {
        return Err(LayoutError::SpanOverflow { item, span: span as u64 });
    }
    Ok(span as u32)
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub code: Vec<u8>,
    /// Unit offset of each item; the extra last entry is the code length.
    pub unit_offsets: Vec<u32>,
    /// Unit offset of each label.
    pub label_offsets: Vec<u32>,
    pub iterations: u32,
}

impl Layout {
    /// Byte offset of item `i` (`i == len` gives the end of the code).
    pub fn item_offset(&self, i: usize) -> usize {
        self.unit_offsets[i] as usize * UNIT
    }

    pub fn label_offset(&self, label: Label) -> usize {
        self.label_offsets[label.0 as usize] as usize * UNIT
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::decode_all;

    #[test]
    fn short_forward_jump() {
        let mut asm = Assembler::new();
        let end = asm.new_label();
        asm.emit_jump(Opcode::JumpForward, end, 1);
        asm.emit(Opcode::Nop, 0, 1);
        asm.emit(Opcode::Nop, 0, 1);
        asm.bind(end);
        asm.emit(Opcode::ReturnConst, 0, 1);
        let layout = asm.layout().unwrap();
        let insns = decode_all(&layout.code).unwrap();
        assert_eq!(insns[0].arg, 2);
        assert_eq!(insns[0].jump_target(), Some(6));
        assert_eq!(layout.iterations, 1);
    }

    #[test]
    fn widening_one_jump_can_widen_another() {
        // The outer jump spans the inner one plus 254 filler units. Once the
        // inner jump needs a prefix the outer span reaches 256 units.
        let mut asm = Assembler::new();
        let outer = asm.new_label();
        let inner = asm.new_label();
        asm.emit_jump(Opcode::JumpForward, outer, 1);
        asm.emit_jump(Opcode::JumpForward, inner, 1);
        for _ in 0..254 {
            asm.emit(Opcode::Nop, 0, 1);
        }
        asm.emit(Opcode::Nop, 0, 1);
        asm.bind(inner);
        asm.bind(outer);
        asm.emit(Opcode::ReturnConst, 0, 1);
        let layout = asm.layout().unwrap();
        let insns = decode_all(&layout.code).unwrap();
        assert_eq!(insns[0].prefixes(), 1);
        assert_eq!(insns[1].prefixes(), 0);
        assert_eq!(insns[0].jump_target(), Some(layout.label_offset(outer)));
        assert_eq!(insns[1].jump_target(), Some(layout.label_offset(inner)));
        assert!(layout.iterations >= 2);
    }

    #[test]
    fn backward_jump() {
        let mut asm = Assembler::new();
        let top = asm.new_label();
        asm.bind(top);
        asm.emit(Opcode::Nop, 0, 1);
        asm.emit_jump(Opcode::JumpBackward, top, 0);
        let layout = asm.layout().unwrap();
        let insns = decode_all(&layout.code).unwrap();
        assert_eq!(insns[1].arg, 2);
        assert_eq!(insns[1].jump_target(), Some(0));
    }

    #[test]
    fn forward_jump_to_earlier_label_is_rejected() {
        let mut asm = Assembler::new();
        let top = asm.new_label();
        asm.bind(top);
        asm.emit(Opcode::Nop, 0, 1);
        asm.emit_jump(Opcode::JumpForward, top, 1);
        assert!(matches!(asm.layout(), Err(LayoutError::WrongDirection { .. })));
    }

    #[test]
    fn line_table_breaks_at_labels() {
        let mut asm = Assembler::new();
        let l = asm.new_label();
        asm.emit(Opcode::Nop, 0, 1);
        asm.bind(l);
        asm.emit(Opcode::Nop, 0, 1);
        asm.emit(Opcode::Nop, 0, 2);
        let layout = asm.layout().unwrap();
        let table = asm.line_table(&layout, &[]);
        let starts: Vec<_> = table.iter().map(|e| (e.start, e.line)).collect();
        assert_eq!(starts, vec![(0, 1), (2, 1), (4, 2)]);
    }
}
