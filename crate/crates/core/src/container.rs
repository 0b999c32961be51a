//! The `.minic` binary container: a compiled code-object tree plus the
//! coverable universe of its source, so it can be instrumented later.
//!
//! Layout: magic `DCOV`, format version (u16), the root code object, then the
//! universe. Integers are little-endian; strings and sequences carry a u32
//! length.

use std::collections::BTreeSet;
use std::sync::Arc;

use thiserror::Error;

use crate::code::{CodeObject, Const, ExcEntry, LineEntry, ProbeHandle};
use crate::frontend::CoverableUniverse;

pub const MAGIC: &[u8; 4] = b"DCOV";
pub const FORMAT_VERSION: u16 = 1;

const TAG_NONE: u8 = 0;
const TAG_BOOL: u8 = 1;
const TAG_INT: u8 = 2;
const TAG_FLOAT: u8 = 3;
const TAG_STR: u8 = 4;
const TAG_TUPLE: u8 = 5;
const TAG_CODE: u8 = 6;
const TAG_PROBE: u8 = 7;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("not a decov container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0} (expected {FORMAT_VERSION})")]
    Version(u16),
    #[error("truncated container at byte {0}")]
    Truncated(usize),
    #[error("unknown constant tag {tag} at byte {at}")]
    BadTag { tag: u8, at: usize },
    #[error("invalid utf-8 string at byte {0}")]
    BadString(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

pub fn write(code: &CodeObject, universe: &CoverableUniverse) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);
    w.code(code);
    w.str(&universe.file);
    w.u32(universe.lines.len() as u32);
    for &l in &universe.lines {
        w.u32(l);
    }
    w.u32(universe.branches.len() as u32);
    for &(o, d) in &universe.branches {
        w.u32(o);
        w.u32(d);
    }
    w.0
}

pub fn read(bytes: &[u8]) -> Result<(Arc<CodeObject>, CoverableUniverse), ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ContainerError::Version(version));
    }
    let code = r.code()?;
    let file = r.str()?;
    let mut lines = BTreeSet::new();
    for _ in 0..r.u32()? {
        lines.insert(r.u32()?);
    }
    let mut branches = BTreeSet::new();
    for _ in 0..r.u32()? {
        branches.insert((r.u32()?, r.u32()?));
    }
    if r.pos != bytes.len() {
        return Err(ContainerError::Trailing(bytes.len() - r.pos));
    }
    Ok((code, CoverableUniverse { file, lines, branches }))
}

pub fn is_container(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn code(&mut self, c: &CodeObject) {
        self.str(&c.name);
        self.str(&c.source);
        self.u32(c.first_line);
        self.u32(c.arg_count);
        self.u32(c.code.len() as u32);
        self.0.extend_from_slice(&c.code);
        self.u32(c.consts.len() as u32);
        for k in &c.consts {
            self.constant(k);
        }
        self.u32(c.names.len() as u32);
        for n in &c.names {
            self.str(n);
        }
        self.u32(c.line_table.len() as u32);
        for e in &c.line_table {
            self.u32(e.start as u32);
            self.u32(e.line);
        }
        self.u32(c.exc_table.len() as u32);
        for e in &c.exc_table {
            self.u32(e.start as u32);
            self.u32(e.end as u32);
            self.u32(e.handler as u32);
            self.u32(e.depth);
        }
    }

    fn constant(&mut self, k: &Const) {
        match k {
            Const::None => self.0.push(TAG_NONE),
            Const::Bool(b) => {
                self.0.push(TAG_BOOL);
                self.0.push(*b as u8);
            }
            Const::Int(i) => {
                self.0.push(TAG_INT);
                self.0.extend_from_slice(&i.to_le_bytes());
            }
            Const::Float(x) => {
                self.0.push(TAG_FLOAT);
                self.0.extend_from_slice(&x.to_bits().to_le_bytes());
            }
            Const::Str(s) => {
                self.0.push(TAG_STR);
                self.str(s);
            }
            Const::Tuple(items) => {
                self.0.push(TAG_TUPLE);
                self.u32(items.len() as u32);
                for item in items.iter() {
                    self.constant(item);
                }
            }
            Const::Code(c) => {
                self.0.push(TAG_CODE);
                self.code(c);
            }
            Const::Probe(h) => {
                self.0.push(TAG_PROBE);
                self.u32(h.0);
            }
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(ContainerError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, ContainerError> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ContainerError::BadString(at))
    }

    fn code(&mut self) -> Result<Arc<CodeObject>, ContainerError> {
        let name = self.str()?;
        let source = self.str()?;
        let first_line = self.u32()?;
        let arg_count = self.u32()?;
        let n = self.u32()? as usize;
        let code = self.take(n)?.to_vec();
        let mut consts = Vec::new();
        for _ in 0..self.u32()? {
            consts.push(self.constant()?);
        }
        let mut names = Vec::new();
        for _ in 0..self.u32()? {
            names.push(Arc::from(self.str()?));
        }
        let mut line_table = Vec::new();
        for _ in 0..self.u32()? {
            line_table.push(LineEntry { start: self.u32()? as usize, line: self.u32()? });
        }
        let mut exc_table = Vec::new();
        for _ in 0..self.u32()? {
            exc_table.push(ExcEntry {
                start: self.u32()? as usize,
                end: self.u32()? as usize,
                handler: self.u32()? as usize,
                depth: self.u32()?,
            });
        }
        Ok(Arc::new(CodeObject { name, source, first_line, arg_count, code, consts, names, line_table, exc_table }))
    }

    fn constant(&mut self) -> Result<Const, ContainerError> {
        let at = self.pos;
        Ok(match self.u8()? {
            TAG_NONE => Const::None,
            TAG_BOOL => Const::Bool(self.u8()? != 0),
            TAG_INT => Const::Int(self.u64()? as i64),
            TAG_FLOAT => Const::Float(f64::from_bits(self.u64()?)),
            TAG_STR => Const::Str(self.str()?.into()),
            TAG_TUPLE => {
                let mut items = Vec::new();
                for _ in 0..self.u32()? {
                    items.push(self.constant()?);
                }
                Const::Tuple(items.into())
            }
            TAG_CODE => Const::Code(self.code()?),
            TAG_PROBE => Const::Probe(ProbeHandle(self.u32()?)),
            tag => return Err(ContainerError::BadTag { tag, at }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::compile;
    use crate::frontend::{enumerate_universe, parse};
    use crate::transform::transform;

    fn sample() -> (Arc<CodeObject>, CoverableUniverse) {
        let src = "def f(a) {\n  if a { return (1, 2.5, \"s\", None, True) }\n  return -3\n}\nf(1)";
        let module = transform(parse(src, "m.mini").unwrap());
        (compile(&module).unwrap(), enumerate_universe(&module))
    }

    #[test]
    fn round_trip() {
        let (code, universe) = sample();
        let bytes = write(&code, &universe);
        assert!(is_container(&bytes));
        let (back, u2) = read(&bytes).unwrap();
        assert_eq!(*back, *code);
        assert_eq!(u2, universe);
    }

    #[test]
    fn rejects_damage() {
        let (code, universe) = sample();
        let bytes = write(&code, &universe);
        assert_eq!(read(&bytes[..bytes.len() - 1]).unwrap_err(), ContainerError::Truncated(bytes.len() - 4));
        let mut v = bytes.clone();
        v[4] = 9;
        assert_eq!(read(&v).unwrap_err(), ContainerError::Version(9));
        assert_eq!(read(b"XXXX").unwrap_err(), ContainerError::BadMagic);
        let mut v = bytes;
        v.push(0);
        assert_eq!(read(&v).unwrap_err(), ContainerError::Trailing(1));
    }
}
