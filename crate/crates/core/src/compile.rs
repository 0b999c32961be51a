//! AST to bytecode.
//!
//! Every instruction is attributed to the line of the statement that
//! produced it, except artificial control flow (loop back-edges, the jump
//! over an `else` arm, implicit returns), which gets line 0. Markers compile
//! to `LOAD_CONST (origin, dest); STORE_NAME _branch` attributed to the origin
//! line, with no optimization that could disturb the idiom.

use std::sync::Arc;

use thiserror::Error;

use crate::asm::{Assembler, Label, LayoutError};
use crate::code::{CodeObject, Const, ExcEntry};
use crate::frontend::ast::*;
use crate::isa::Opcode;

/// Largest constants table the compiler will produce.
pub const MAX_CONSTS: usize = (1 << 26) - 1;

/// Scratch name holding a return value while loop iterators are popped.
pub const RETURN_SLOT: &str = "$ret";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("{function}: {source}")]
    Layout { function: String, source: LayoutError },
    #[error("{0}: more than {MAX_CONSTS} constants")]
    TooManyConstants(String),
}

pub fn compile(module: &Module) -> Result<Arc<CodeObject>, CompileError> {
    let mut unit = Unit::new("<module>", &module.file, 1, &[]);
    unit.block(&module.body)?;
    unit.implicit_return();
    unit.finish().map(Arc::new)
}

struct PendingExc {
    start: Label,
    end: Label,
    handler: Label,
    depth: u32,
}

struct Unit {
    name: String,
    file: String,
    first_line: u32,
    arg_count: u32,
    asm: Assembler,
    consts: Vec<Const>,
    names: Vec<Arc<str>>,
    exc: Vec<PendingExc>,
    /// Range iterators of enclosing `for` loops sitting on the stack.
    depth: u32,
}

impl Unit {
    fn new(name: &str, file: &str, first_line: u32, params: &[String]) -> Self {
        let mut unit = Unit {
            name: name.to_string(),
            file: file.to_string(),
            first_line,
            arg_count: params.len() as u32,
            asm: Assembler::new(),
            consts: Vec::new(),
            names: Vec::new(),
            exc: Vec::new(),
            depth: 0,
        };
        for p in params {
            unit.name_index(p);
        }
        unit
    }

    fn constant(&mut self, c: Const) -> u32 {
        // Code objects are never shared between definitions.
        if !matches!(c, Const::Code(_)) {
            if let Some(i) = self.consts.iter().position(|k| *k == c) {
                return i as u32;
            }
        }
        self.consts.push(c);
        self.consts.len() as u32 - 1
    }

    fn implicit_return(&mut self) {
        let none = self.constant(Const::None);
        self.asm.emit(Opcode::ReturnConst, none, 0);
    }

    fn name_index(&mut self, name: &str) -> u32 {
        if let Some(i) = self.names.iter().position(|n| &**n == name) {
            return i as u32;
        }
        self.names.push(name.into());
        self.names.len() as u32 - 1
    }

    fn finish(self) -> Result<CodeObject, CompileError> {
        if self.consts.len() > MAX_CONSTS {
            return Err(CompileError::TooManyConstants(self.name));
        }
        let layout = self
            .asm
            .layout()
            .map_err(|source| CompileError::Layout { function: self.name.clone(), source })?;
        let line_table = self.asm.line_table(&layout, &[]);
        let exc_table = self
            .exc
            .iter()
            .map(|e| ExcEntry {
                start: layout.label_offset(e.start),
                end: layout.label_offset(e.end),
                handler: layout.label_offset(e.handler),
                depth: e.depth,
            })
            .collect();
        Ok(CodeObject {
            name: self.name,
            source: self.file,
            first_line: self.first_line,
            arg_count: self.arg_count,
            code: layout.code,
            consts: self.consts,
            names: self.names,
            line_table,
            exc_table,
        })
    }

    fn block(&mut self, block: &Block) -> Result<(), CompileError> {
        block.iter().try_for_each(|s| self.stmt(s))
    }

    fn stmt(&mut self, stmt: &Stmt) -> Result<(), CompileError> {
        let line = stmt.line;
        match &stmt.kind {
            StmtKind::Assign { target, value } => {
                self.expr(value, line);
                let n = self.name_index(target);
                self.asm.emit(Opcode::StoreName, n, line);
            }
            StmtKind::Expr(e) => {
                self.expr(e, line);
                self.asm.emit(Opcode::PopTop, 0, line);
            }
            StmtKind::Pass => {
                self.asm.emit(Opcode::Nop, 0, line);
            }
            StmtKind::Raise => {
                self.asm.emit(Opcode::Raise, 0, line);
            }
            StmtKind::BranchMarker { origin, dest } => {
                let pair = Const::Tuple(Arc::from(vec![Const::Int(*origin as i64), Const::Int(*dest as i64)]));
                let c = self.constant(pair);
                let n = self.name_index(BRANCH_NAME);
                self.asm.emit(Opcode::LoadConst, c, line);
                self.asm.emit(Opcode::StoreName, n, line);
            }
            StmtKind::If { test, body, orelse, .. } => {
                let else_label = self.asm.new_label();
                self.expr(test, line);
                self.asm.emit_jump(Opcode::PopJumpIfFalse, else_label, line);
                self.block(body)?;
                if orelse.is_empty() {
                    self.asm.bind(else_label);
                } else {
                    let end = self.asm.new_label();
                    self.asm.emit_jump(Opcode::JumpForward, end, 0);
                    self.asm.bind(else_label);
                    self.block(orelse)?;
                    self.asm.bind(end);
                }
            }
            StmtKind::While { test, body, orelse } => {
                let top = self.asm.new_label();
                let else_label = self.asm.new_label();
                self.asm.bind(top);
                self.expr(test, line);
                self.asm.emit_jump(Opcode::PopJumpIfFalse, else_label, line);
                self.block(body)?;
                self.asm.emit_jump(Opcode::JumpBackward, top, 0);
                self.asm.bind(else_label);
                self.block(orelse)?;
            }
            StmtKind::ForRange { var, count, body, orelse } => {
                let top = self.asm.new_label();
                let else_label = self.asm.new_label();
                self.expr(count, line);
                self.asm.emit(Opcode::GetRangeIter, 0, line);
                self.asm.bind(top);
                self.asm.emit_jump(Opcode::ForRangeNext, else_label, line);
                let n = self.name_index(var);
                self.asm.emit(Opcode::StoreName, n, line);
                self.depth += 1;
                self.block(body)?;
                self.depth -= 1;
                self.asm.emit_jump(Opcode::JumpBackward, top, 0);
                self.asm.bind(else_label);
                self.block(orelse)?;
            }
            StmtKind::Match { subject, cases } => {
                let end = self.asm.new_label();
                self.expr(subject, line);
                let mut fell_through = true;
                for case in cases {
                    let case_line = case.line;
                    let label = self.asm.new_label();
                    self.asm.bind(label);
                    match &case.pattern {
                        Pattern::Literal(lit) => {
                            let next = self.asm.new_label();
                            let c = self.constant(literal_const(lit));
                            self.asm.emit(Opcode::MatchLiteral, c, case_line);
                            self.asm.emit_jump(Opcode::PopJumpIfFalse, next, case_line);
                            self.asm.emit(Opcode::PopTop, 0, case_line);
                            self.block(&case.body)?;
                            self.asm.emit_jump(Opcode::JumpForward, end, 0);
                            self.asm.bind(next);
                        }
                        Pattern::Wildcard => {
                            self.asm.emit(Opcode::PopTop, 0, case_line);
                            self.block(&case.body)?;
                            fell_through = false;
                            break;
                        }
                    }
                }
                if fell_through {
                    self.asm.emit(Opcode::PopTop, 0, 0);
                }
                self.asm.bind(end);
            }
            StmtKind::Def { name, params, body } => {
                let mut unit = Unit::new(name, &self.file, line, params);
                unit.block(body)?;
                unit.implicit_return();
                let code = unit.finish()?;
                let c = self.constant(Const::Code(Arc::new(code)));
                let n = self.name_index(name);
                self.asm.emit(Opcode::LoadConst, c, line);
                self.asm.emit(Opcode::MakeFunction, 0, line);
                self.asm.emit(Opcode::StoreName, n, line);
            }
            StmtKind::Return(value) => {
                if self.depth == 0 {
                    match value {
                        Some(v) => {
                            self.expr(v, line);
                            self.asm.emit(Opcode::ReturnValue, 0, line);
                        }
                        None => {
                            let c = self.constant(Const::None);
                            self.asm.emit(Opcode::ReturnConst, c, line);
                        }
                    }
                } else {
                    let slot = self.name_index(RETURN_SLOT);
                    if let Some(v) = value {
                        self.expr(v, line);
                        self.asm.emit(Opcode::StoreName, slot, line);
                    }
                    for _ in 0..self.depth {
                        self.asm.emit(Opcode::PopTop, 0, line);
                    }
                    if value.is_some() {
                        self.asm.emit(Opcode::LoadName, slot, line);
                        self.asm.emit(Opcode::ReturnValue, 0, line);
                    } else {
                        let c = self.constant(Const::None);
                        self.asm.emit(Opcode::ReturnConst, c, line);
                    }
                }
            }
            StmtKind::Try { body, handler } => {
                let start = self.asm.new_label();
                let end = self.asm.new_label();
                let handler_label = self.asm.new_label();
                let after = self.asm.new_label();
                self.asm.emit(Opcode::Nop, 0, line);
                self.asm.bind(start);
                self.block(body)?;
                self.asm.bind(end);
                self.exc.push(PendingExc { start, end, handler: handler_label, depth: self.depth });
                self.asm.emit_jump(Opcode::JumpForward, after, 0);
                self.asm.bind(handler_label);
                self.asm.emit(Opcode::Nop, 0, handler.line);
                self.block(&handler.body)?;
                self.asm.bind(after);
            }
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr, line: u32) {
        match &e.kind {
            ExprKind::Lit(lit) => {
                let c = self.constant(literal_const(lit));
                self.asm.emit(Opcode::LoadConst, c, line);
            }
            ExprKind::Name(n) => {
                let i = self.name_index(n);
                self.asm.emit(Opcode::LoadName, i, line);
            }
            ExprKind::Unary(op, inner) => {
                self.expr(inner, line);
                let opcode = match op {
                    UnaryOp::Neg => Opcode::UnaryNeg,
                    UnaryOp::Not => Opcode::UnaryNot,
                };
                self.asm.emit(opcode, 0, line);
            }
            ExprKind::Binary(op, a, b) => {
                self.expr(a, line);
                self.expr(b, line);
                self.asm.emit(Opcode::BinaryOp, *op as u32, line);
            }
            ExprKind::Compare(op, a, b) => {
                self.expr(a, line);
                self.expr(b, line);
                self.asm.emit(Opcode::CompareOp, *op as u32, line);
            }
            ExprKind::Call(f, args) => {
                self.expr(f, line);
                for a in args {
                    self.expr(a, line);
                }
                self.asm.emit(Opcode::Call, args.len() as u32, line);
            }
            ExprKind::Print(args) => {
                for a in args {
                    self.expr(a, line);
                }
                self.asm.emit(Opcode::Print, args.len() as u32, line);
            }
            ExprKind::Tuple(items) => {
                for a in items {
                    self.expr(a, line);
                }
                self.asm.emit(Opcode::BuildTuple, items.len() as u32, line);
            }
        }
    }
}

fn literal_const(lit: &Literal) -> Const {
    match lit {
        Literal::Int(i) => Const::Int(*i),
        Literal::Float(x) => Const::Float(*x),
        Literal::Str(s) => Const::Str(s.as_str().into()),
        Literal::Bool(b) => Const::Bool(*b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;
    use crate::isa::decode_all;
    use crate::transform::transform;

    fn ops(code: &CodeObject) -> Vec<Opcode> {
        decode_all(&code.code).unwrap().iter().map(|d| d.op).collect()
    }

    #[test]
    fn pass_module() {
        let code = compile(&parse("pass", "t.mini").unwrap()).unwrap();
        assert_eq!(ops(&code), vec![Opcode::Nop, Opcode::ReturnConst]);
        let empty = compile(&parse("", "t.mini").unwrap()).unwrap();
        assert_eq!(ops(&empty), vec![Opcode::ReturnConst]);
    }

    #[test]
    fn marker_idiom_is_two_instructions_on_origin_line() {
        let m = transform(parse("if x == 0 {\n  x = 1\n} else {\n  x = 2\n}", "t.mini").unwrap());
        let code = compile(&m).unwrap();
        let insns = decode_all(&code.code).unwrap();
        let branch = code.names.iter().position(|n| &**n == BRANCH_NAME).unwrap() as u32;
        let mut found = Vec::new();
        for w in insns.windows(2) {
            if w[0].op == Opcode::LoadConst && w[1].op == Opcode::StoreName && w[1].arg == branch {
                found.push((code.consts[w[0].arg as usize].as_marker_pair().unwrap(), code.line_at(w[0].offset)));
            }
        }
        assert_eq!(found, vec![((1, 2), 1), ((1, 4), 1)]);
    }

    #[test]
    fn nested_functions_are_constants() {
        let code = compile(&parse("def f() {\n  def g() { pass }\n  return g\n}", "t").unwrap()).unwrap();
        assert_eq!(code.tree_size(), 3);
        let f = code.children().next().unwrap().1.clone();
        assert_eq!(f.name, "f");
        assert_eq!(f.first_line, 1);
        assert_eq!(f.children().next().unwrap().1.name, "g");
    }

    #[test]
    fn line_table_breaks_at_jump_targets() {
        let code = compile(&parse("while x { x = x - 1 }", "t").unwrap()).unwrap();
        // loop top and body, back-edge, exit target (the implicit return)
        let lines: Vec<u32> = code.line_table.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![1, 0, 0]);
    }

    #[test]
    fn return_inside_for_pops_iterator() {
        let code = compile(&parse("def f() {\n for i in range(3) { return i }\n}", "t").unwrap()).unwrap();
        let f = code.children().next().unwrap().1.clone();
        let o = ops(&f);
        let ret = o.iter().position(|op| *op == Opcode::ReturnValue).unwrap();
        assert_eq!(&o[ret - 3..=ret], &[Opcode::StoreName, Opcode::PopTop, Opcode::LoadName, Opcode::ReturnValue]);
    }

    #[test]
    fn try_records_handler_range() {
        let code = compile(&parse("try {\n  raise\n} except {\n  x = 1\n}", "t").unwrap()).unwrap();
        assert_eq!(code.exc_table.len(), 1);
        let e = code.exc_table[0];
        assert!(e.start < e.end && e.end <= e.handler);
        assert_eq!(code.line_at(e.handler), 3);
    }
}
