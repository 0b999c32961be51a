//! Immutable compiled code units.
//!
//! A [`CodeObject`] is never modified after construction; every rewrite
//! (probe insertion, marker stripping, probe elimination) builds a new one.
//! Nested function bodies live in the constants table, so a module compiles
//! to a tree of code objects.

use std::fmt;
use std::sync::Arc;

use crate::isa::UNIT;

/// Index of a probe in the coverage engine's probe table. Stored only in
/// constants tables, never produced by user code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProbeHandle(pub u32);

#[derive(Debug, Clone)]
pub enum Const {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Arc<str>),
    Tuple(Arc<[Const]>),
    Code(Arc<CodeObject>),
    Probe(ProbeHandle),
}

impl PartialEq for Const {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Const::None, Const::None) => true,
            (Const::Bool(a), Const::Bool(b)) => a == b,
            (Const::Int(a), Const::Int(b)) => a == b,
            (Const::Float(a), Const::Float(b)) => a.to_bits() == b.to_bits(),
            (Const::Str(a), Const::Str(b)) => a == b,
            (Const::Tuple(a), Const::Tuple(b)) => a == b,
            (Const::Code(a), Const::Code(b)) => Arc::ptr_eq(a, b) || a == b,
            (Const::Probe(a), Const::Probe(b)) => a == b,
            _ => false,
        }
    }
}

impl Const {
    /// The `(origin, dest)` payload if this is a branch-marker tuple.
    pub fn as_marker_pair(&self) -> Option<(u32, u32)> {
        let Const::Tuple(items) = self else { return None };
        match &items[..] {
            [Const::Int(o), Const::Int(d)] => Some((u32::try_from(*o).ok()?, u32::try_from(*d).ok()?)),
            _ => None,
        }
    }
}

impl fmt::Display for Const {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const::None => f.write_str("None"),
            Const::Bool(true) => f.write_str("True"),
            Const::Bool(false) => f.write_str("False"),
            Const::Int(i) => write!(f, "{i}"),
            Const::Float(x) => f.write_str(&crate::value::format_float(*x)),
            Const::Str(s) => write!(f, "{s:?}"),
            Const::Tuple(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                if items.len() == 1 {
                    f.write_str(",")?;
                }
                f.write_str(")")
            }
            Const::Code(c) => write!(f, "<code {}>", c.name),
            Const::Probe(h) => write!(f, "<probe {}>", h.0),
        }
    }
}

/// Start of a run of instructions attributed to one source line. Line 0 marks
/// artificial code (loop back-edges, implicit returns) that belongs to no line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineEntry {
    pub start: usize,
    pub line: u32,
}

/// Protected range `[start, end)`; an exception raised inside it resumes at
/// `handler` with the value stack truncated to `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExcEntry {
    pub start: usize,
    pub end: usize,
    pub handler: usize,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeObject {
    pub name: String,
    pub source: String,
    pub first_line: u32,
    pub arg_count: u32,
    pub code: Vec<u8>,
    pub consts: Vec<Const>,
    pub names: Vec<Arc<str>>,
    pub line_table: Vec<LineEntry>,
    pub exc_table: Vec<ExcEntry>,
}

impl CodeObject {
    pub fn len_units(&self) -> usize {
        self.code.len() / UNIT
    }

    /// Source line of the instruction at byte `offset` (0 if artificial or
    /// not covered by the table).
    pub fn line_at(&self, offset: usize) -> u32 {
        match self.line_table.partition_point(|e| e.start <= offset) {
            0 => 0,
            i => self.line_table[i - 1].line,
        }
    }

    /// Byte range `[start, end)` of the line-table entry containing `offset`.
    pub fn line_range_at(&self, offset: usize) -> (usize, usize, u32) {
        let i = self.line_table.partition_point(|e| e.start <= offset);
        let (start, line) = match i {
            0 => (0, 0),
            _ => (self.line_table[i - 1].start, self.line_table[i - 1].line),
        };
        let end = self.line_table.get(i).map_or(self.code.len(), |e| e.start);
        (start, end, line)
    }

    /// Nested code objects with their constant indices.
    pub fn children(&self) -> impl Iterator<Item = (usize, &Arc<CodeObject>)> {
        self.consts.iter().enumerate().filter_map(|(i, c)| match c {
            Const::Code(code) => Some((i, code)),
            _ => None,
        })
    }

    /// Depth-first pre-order walk over the code-object tree, passing each
    /// node's const-index path from `self`.
    pub fn walk<'a>(&'a self, visit: &mut dyn FnMut(&[u32], &'a CodeObject)) {
        fn go<'a>(
            node: &'a CodeObject,
            path: &mut Vec<u32>,
            visit: &mut dyn FnMut(&[u32], &'a CodeObject),
        ) {
            visit(path, node);
            for (idx, child) in node.children() {
                path.push(idx as u32);
                go(child, path, visit);
                path.pop();
            }
        }
        go(self, &mut Vec::new(), visit);
    }

    /// Follows a const-index path to a descendant.
    pub fn descendant(self: &Arc<Self>, path: &[u32]) -> Option<Arc<CodeObject>> {
        let mut node = self.clone();
        for &idx in path {
            let next = match node.consts.get(idx as usize)? {
                Const::Code(child) => child.clone(),
                _ => return None,
            };
            node = next;
        }
        Some(node)
    }

    /// Total number of code objects in the tree rooted here.
    pub fn tree_size(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_, _| n += 1);
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CodeObject {
        CodeObject {
            name: "m".into(),
            source: "m.mini".into(),
            first_line: 1,
            arg_count: 0,
            code: vec![0, 0, 0, 0, 0, 0],
            consts: vec![],
            names: vec![],
            line_table: vec![LineEntry { start: 0, line: 3 }, LineEntry { start: 4, line: 5 }],
            exc_table: vec![],
        }
    }

    #[test]
    fn line_lookup_uses_greatest_start_not_after_offset() {
        let c = sample();
        assert_eq!(c.line_at(0), 3);
        assert_eq!(c.line_at(2), 3);
        assert_eq!(c.line_at(4), 5);
        assert_eq!(c.line_range_at(2), (0, 4, 3));
        assert_eq!(c.line_range_at(4), (4, 6, 5));
    }

    #[test]
    fn marker_pair_only_for_int_pairs() {
        let t = Const::Tuple(Arc::from(vec![Const::Int(1), Const::Int(3)]));
        assert_eq!(t.as_marker_pair(), Some((1, 3)));
        let t = Const::Tuple(Arc::from(vec![Const::Int(1), Const::Str("x".into())]));
        assert_eq!(t.as_marker_pair(), None);
        assert_eq!(Const::Int(4).as_marker_pair(), None);
    }

    #[test]
    fn descendant_follows_paths() {
        let leaf = Arc::new(sample());
        let mut mid = sample();
        mid.consts = vec![Const::Int(0), Const::Code(leaf.clone())];
        let mut root = sample();
        root.consts = vec![Const::Code(Arc::new(mid))];
        let root = Arc::new(root);
        assert!(Arc::ptr_eq(&root.descendant(&[0, 1]).unwrap(), &leaf));
        assert!(root.descendant(&[0, 0]).is_none());
        assert_eq!(root.tree_size(), 3);
    }
}
