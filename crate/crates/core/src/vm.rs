//! The stack machine.
//!
//! Frames share one value stack. Functions are called through the
//! [`Registry`], never through a code object held in a value, so rebinding a
//! function id changes what the next call runs while frames already running
//! the old code finish on it.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

use crate::code::{CodeObject, Const};
use crate::frontend::ast::BRANCH_NAME;
use crate::isa::{BinOp, CmpOp, Opcode, UNIT};
use crate::trace::Tracer;
use crate::value::{self, Builtin, ErrorKind, Exception, Value};

/// Deepest call nesting before `RecursionError`.
pub const MAX_CALL_DEPTH: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("unknown function id {0}")]
    UnknownId(u32),
}

/// Single table of callable code. Ids are stable; the code behind an id can
/// be replaced. Every code object ever registered stays alive so its address
/// keeps identifying it.
#[derive(Debug, Default)]
pub struct Registry {
    current: Vec<Arc<CodeObject>>,
    by_addr: HashMap<usize, u32>,
    retired: Vec<Arc<CodeObject>>,
}

fn addr(code: &CodeObject) -> usize {
    code as *const CodeObject as usize
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Registers every code object in the tree (once). Returns the root's id.
    pub fn register_tree(&mut self, root: &Arc<CodeObject>) -> u32 {
        let root_id = self.register(root);
        for (_, child) in root.children() {
            self.register_tree(child);
        }
        root_id
    }

    fn register(&mut self, code: &Arc<CodeObject>) -> u32 {
        if let Some(&id) = self.by_addr.get(&addr(code)) {
            return id;
        }
        self.current.push(code.clone());
        let id = self.current.len() as u32 - 1;
        self.by_addr.insert(addr(code), id);
        id
    }

    /// Id of a code object that is, or once was, registered.
    pub fn id_of(&self, code: &CodeObject) -> Option<u32> {
        self.by_addr.get(&addr(code)).copied()
    }

    pub fn current(&self, id: u32) -> Result<&Arc<CodeObject>, RegistryError> {
        self.current.get(id as usize).ok_or(RegistryError::UnknownId(id))
    }

    /// Future calls of `id` run `new`; running frames are unaffected.
    pub fn rebind(&mut self, id: u32, new: Arc<CodeObject>) -> Result<(), RegistryError> {
        let slot = self.current.get_mut(id as usize).ok_or(RegistryError::UnknownId(id))?;
        if Arc::ptr_eq(slot, &new) {
            return Ok(());
        }
        self.by_addr.insert(addr(&new), id);
        let old = std::mem::replace(slot, new);
        self.retired.push(old);
        Ok(())
    }
}

/// What the VM calls out to besides tracing.
pub trait Hooks {
    /// A `PROBE` instruction ran. An error aborts the run as a VM fault.
    fn fire(&mut self, probe: u32, registry: &mut Registry) -> Result<(), String>;

    /// `load(name)` from code in `from`. `Ok(None)` means already loaded;
    /// `Ok(Some(code))` is a module to execute now.
    fn load(
        &mut self,
        name: &str,
        from: &str,
        registry: &mut Registry,
    ) -> Result<Option<Arc<CodeObject>>, Exception> {
        let _ = (from, registry);
        Err(Exception::new(ErrorKind::LoadError, format!("cannot load {name:?}: no loader")))
    }

    /// A module started by [`Hooks::load`] has finished (or unwound).
    fn module_finished(&mut self, source: &str) {
        let _ = source;
    }
}

/// Probe sink that ignores every probe.
pub struct NoHooks;

impl Hooks for NoHooks {
    fn fire(&mut self, _: u32, _: &mut Registry) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitStatus {
    Ok,
    /// Uncaught Mini exception.
    Uncaught(Exception),
    /// Internal failure: malformed code or an aborted rewrite.
    Fault(String),
}

impl ExitStatus {
    pub fn code(&self) -> i32 {
        match self {
            ExitStatus::Ok => 0,
            ExitStatus::Uncaught(_) => 1,
            ExitStatus::Fault(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VmStats {
    pub calls: u64,
    /// Jumps over an eliminated probe that were checked for exactness.
    pub skip_checks: u64,
    pub skip_violations: u64,
}

struct CodeInfo {
    code: Arc<CodeObject>,
    consts: Vec<Value>,
    /// Probe id for `Const::Probe` entries, `u32::MAX` elsewhere.
    probe_ids: Vec<u32>,
    /// Global symbol for each name.
    syms: Vec<u32>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum FrameKind {
    Root,
    Call,
    Load,
}

struct Frame {
    info: Rc<CodeInfo>,
    pc: usize,
    /// Start of the instruction that suspended this frame.
    insn: usize,
    base: usize,
    locals: Option<Vec<Option<Value>>>,
    kind: FrameKind,
    last_line: u32,
    line_lo: usize,
    line_hi: usize,
}

pub struct Vm<'o> {
    pub registry: Registry,
    globals: Vec<Option<Value>>,
    symbols: HashMap<Arc<str>, u32>,
    symbol_names: Vec<Arc<str>>,
    by_id: Vec<Option<Rc<CodeInfo>>>,
    by_addr: HashMap<usize, Rc<CodeInfo>>,
    out: &'o mut dyn Write,
    pub stats: VmStats,
    /// Check every jump over an eliminated probe. Debug builds only; timing
    /// runs switch it off.
    pub check_skips: bool,
}

enum Flow {
    Raise(Exception),
    Fault(String),
}

macro_rules! pop {
    ($stack:expr) => {
        match $stack.pop() {
            Some(v) => v,
            None => break Flow::Fault("value stack underflow".into()),
        }
    };
}

impl<'o> Vm<'o> {
    pub fn new(out: &'o mut dyn Write) -> Self {
        Vm {
            registry: Registry::new(),
            globals: Vec::new(),
            symbols: HashMap::new(),
            symbol_names: Vec::new(),
            by_id: Vec::new(),
            by_addr: HashMap::new(),
            out,
            stats: VmStats::default(),
            check_skips: cfg!(debug_assertions),
        }
    }

    fn symbol(&mut self, name: &Arc<str>) -> u32 {
        if let Some(&s) = self.symbols.get(name) {
            return s;
        }
        let s = self.symbol_names.len() as u32;
        self.symbols.insert(name.clone(), s);
        self.symbol_names.push(name.clone());
        self.globals.push(None);
        s
    }

    fn info_for(&mut self, code: &Arc<CodeObject>) -> Rc<CodeInfo> {
        if let Some(info) = self.by_addr.get(&addr(code)) {
            return info.clone();
        }
        let syms = code.names.iter().map(|n| self.symbol(n)).collect();
        let info = Rc::new(CodeInfo {
            code: code.clone(),
            consts: code.consts.iter().map(Value::from).collect(),
            probe_ids: code
                .consts
                .iter()
                .map(|c| match c {
                    Const::Probe(h) => h.0,
                    _ => u32::MAX,
                })
                .collect(),
            syms,
        });
        self.by_addr.insert(addr(code), info.clone());
        info
    }

    fn info_for_id(&mut self, id: u32) -> Result<Rc<CodeInfo>, RegistryError> {
        let current = self.registry.current(id)?;
        if let Some(Some(info)) = self.by_id.get(id as usize) {
            if Arc::ptr_eq(&info.code, current) {
                return Ok(info.clone());
            }
        }
        let current = current.clone();
        let info = self.info_for(&current);
        if self.by_id.len() <= id as usize {
            self.by_id.resize(id as usize + 1, None);
        }
        self.by_id[id as usize] = Some(info.clone());
        Ok(info)
    }

    /// Final module-level environment as display strings, without the
    /// branch-marker scratch name.
    pub fn environment(&self) -> BTreeMap<String, String> {
        self.symbol_names
            .iter()
            .zip(&self.globals)
            .filter(|(name, _)| &***name != BRANCH_NAME)
            .filter_map(|(name, v)| v.as_ref().map(|v| (name.to_string(), self.render(v))))
            .collect()
    }

    pub fn global(&self, name: &str) -> Option<&Value> {
        let s = *self.symbols.get(name)?;
        self.globals[s as usize].as_ref()
    }

    fn render(&self, v: &Value) -> String {
        match v {
            Value::Func(id) => match self.registry.current(*id) {
                Ok(code) => format!("<function {}>", code.name),
                Err(_) => v.repr(),
            },
            other => other.repr(),
        }
    }

    fn render_str(&self, v: &Value) -> String {
        match v {
            Value::Str(s) => s.to_string(),
            other => self.render(other),
        }
    }

    /// Runs a module to completion.
    pub fn run(
        &mut self,
        root: &Arc<CodeObject>,
        hooks: &mut dyn Hooks,
        tracer: Option<&mut dyn Tracer>,
    ) -> ExitStatus {
        self.registry.register_tree(root);
        let status = self.run_loop(root, hooks, tracer);
        let _ = self.out.flush();
        status
    }

    fn new_frame(info: Rc<CodeInfo>, base: usize, locals: Option<Vec<Option<Value>>>, kind: FrameKind) -> Frame {
        Frame { info, pc: 0, insn: 0, base, locals, kind, last_line: 0, line_lo: 0, line_hi: 0 }
    }

    fn run_loop(
        &mut self,
        root: &Arc<CodeObject>,
        hooks: &mut dyn Hooks,
        mut tracer: Option<&mut dyn Tracer>,
    ) -> ExitStatus {
        const EXTENDED_ARG: u8 = Opcode::ExtendedArg as u8;
        const NOP: u8 = Opcode::Nop as u8;
        const LOAD_CONST: u8 = Opcode::LoadConst as u8;
        const LOAD_NAME: u8 = Opcode::LoadName as u8;
        const STORE_NAME: u8 = Opcode::StoreName as u8;
        const POP_TOP: u8 = Opcode::PopTop as u8;
        const UNARY_NEG: u8 = Opcode::UnaryNeg as u8;
        const UNARY_NOT: u8 = Opcode::UnaryNot as u8;
        const BINARY_OP: u8 = Opcode::BinaryOp as u8;
        const COMPARE_OP: u8 = Opcode::CompareOp as u8;
        const BUILD_TUPLE: u8 = Opcode::BuildTuple as u8;
        const JUMP_FORWARD: u8 = Opcode::JumpForward as u8;
        const JUMP_BACKWARD: u8 = Opcode::JumpBackward as u8;
        const POP_JUMP_IF_FALSE: u8 = Opcode::PopJumpIfFalse as u8;
        const CALL: u8 = Opcode::Call as u8;
        const MAKE_FUNCTION: u8 = Opcode::MakeFunction as u8;
        const RETURN_VALUE: u8 = Opcode::ReturnValue as u8;
        const RETURN_CONST: u8 = Opcode::ReturnConst as u8;
        const RAISE: u8 = Opcode::Raise as u8;
        const PROBE: u8 = Opcode::Probe as u8;
        const PRINT: u8 = Opcode::Print as u8;
        const GET_RANGE_ITER: u8 = Opcode::GetRangeIter as u8;
        const FOR_RANGE_NEXT: u8 = Opcode::ForRangeNext as u8;
        const MATCH_LITERAL: u8 = Opcode::MatchLiteral as u8;

        let tracing = tracer.is_some();
        let mut stack: Vec<Value> = Vec::with_capacity(256);
        let mut frames: Vec<Frame> = Vec::new();
        let info = self.info_for(root);
        let mut f = Self::new_frame(info, 0, None, FrameKind::Root);
        if let Some(t) = tracer.as_deref_mut() {
            t.call(&f.info.code);
        }

        'frames: loop {
            // the running frame's code, reloaded whenever the frame changes
            let info = f.info.clone();
            let bytes: &[u8] = &info.code.code;
            let consts: &[Value] = &info.consts;
            let mut pc = f.pc;
            let mut start: usize;

            let flow: Flow = loop {
                start = pc;
                if start + 1 >= bytes.len() {
                    break Flow::Fault(format!("pc {start} past end of code"));
                }
                let mut op = bytes[start];
                let mut arg = bytes[start + 1] as u32;
                pc = start + UNIT;
                while op == EXTENDED_ARG && pc + 1 < bytes.len() {
                    op = bytes[pc];
                    arg = (arg << 8) | bytes[pc + 1] as u32;
                    pc += UNIT;
                }

                if tracing && (start < f.line_lo || start >= f.line_hi) {
                    let (lo, hi, line) = info.code.line_range_at(start);
                    f.line_lo = lo;
                    f.line_hi = hi;
                    if line != 0 && line != f.last_line {
                        f.last_line = line;
                        if let Some(t) = tracer.as_deref_mut() {
                            t.line(&info.code, line);
                        }
                    }
                }

                match op {
                    NOP => {}
                    LOAD_CONST => match consts.get(arg as usize) {
                        Some(v) => stack.push(v.clone()),
                        None => break Flow::Fault(format!("constant {arg} out of range")),
                    },
                    LOAD_NAME => {
                        let a = arg as usize;
                        if let Some(Some(v)) = f.locals.as_ref().and_then(|l| l.get(a)) {
                            stack.push(v.clone());
                            continue;
                        }
                        let Some(&sym) = info.syms.get(a) else {
                            break Flow::Fault(format!("name {arg} out of range"));
                        };
                        if let Some(v) = &self.globals[sym as usize] {
                            stack.push(v.clone());
                            continue;
                        }
                        let name = &info.code.names[a];
                        match Builtin::lookup(name) {
                            Some(b) => stack.push(Value::Builtin(b)),
                            None => {
                                break Flow::Raise(Exception::new(
                                    ErrorKind::NameError,
                                    format!("name '{name}' is not defined"),
                                ))
                            }
                        }
                    }
                    STORE_NAME => {
                        let v = pop!(stack);
                        let a = arg as usize;
                        match f.locals.as_mut() {
                            Some(l) if a < l.len() => l[a] = Some(v),
                            Some(_) => break Flow::Fault(format!("name {arg} out of range")),
                            None => match info.syms.get(a) {
                                Some(&sym) => self.globals[sym as usize] = Some(v),
                                None => break Flow::Fault(format!("name {arg} out of range")),
                            },
                        }
                    }
                    POP_TOP => {
                        pop!(stack);
                    }
                    UNARY_NEG => {
                        let v = pop!(stack);
                        match value::negate(&v) {
                            Ok(r) => stack.push(r),
                            Err(e) => break Flow::Raise(e),
                        }
                    }
                    UNARY_NOT => {
                        let v = pop!(stack);
                        stack.push(Value::Bool(!v.truthy()));
                    }
                    BINARY_OP => {
                        let b = pop!(stack);
                        let a = pop!(stack);
                        let r = match (arg, &a, &b) {
                            // small-int fast paths
                            (0, Value::Int(x), Value::Int(y)) if x.checked_add(*y).is_some() => Ok(Value::Int(x + y)),
                            (1, Value::Int(x), Value::Int(y)) if x.checked_sub(*y).is_some() => Ok(Value::Int(x - y)),
                            _ => match BinOp::from_arg(arg) {
                                Some(op) => value::binary(op, &a, &b),
                                None => break Flow::Fault(format!("unknown binary operator {arg}")),
                            },
                        };
                        match r {
                            Ok(v) => stack.push(v),
                            Err(e) => break Flow::Raise(e),
                        }
                    }
                    COMPARE_OP => {
                        let b = pop!(stack);
                        let a = pop!(stack);
                        let r = match (arg, &a, &b) {
                            (2, Value::Int(x), Value::Int(y)) => Ok(Value::Bool(x < y)),
                            _ => match CmpOp::from_arg(arg) {
                                Some(op) => value::compare(op, &a, &b),
                                None => break Flow::Fault(format!("unknown comparison {arg}")),
                            },
                        };
                        match r {
                            Ok(v) => stack.push(v),
                            Err(e) => break Flow::Raise(e),
                        }
                    }
                    BUILD_TUPLE => {
                        let n = arg as usize;
                        if stack.len() < n {
                            break Flow::Fault("value stack underflow".into());
                        }
                        let items: Arc<[Value]> = stack.drain(stack.len() - n..).collect();
                        stack.push(Value::Tuple(items));
                    }
                    JUMP_FORWARD => {
                        let target = pc + arg as usize * UNIT;
                        // a jump over an eliminated probe must land just past it
                        #[cfg(debug_assertions)]
                        if self.check_skips {
                            let mut k = pc;
                            while k + 1 < bytes.len() && bytes[k] == EXTENDED_ARG {
                                k += UNIT;
                            }
                            if bytes.get(k) == Some(&PROBE) {
                                self.stats.skip_checks += 1;
                                if target != k + UNIT {
                                    self.stats.skip_violations += 1;
                                }
                            }
                        }
                        pc = target;
                    }
                    JUMP_BACKWARD => match pc.checked_sub(arg as usize * UNIT) {
                        Some(t) => pc = t,
                        None => break Flow::Fault("backward jump before start of code".into()),
                    },
                    POP_JUMP_IF_FALSE => {
                        let v = pop!(stack);
                        let falsy = match v {
                            Value::Bool(b) => !b,
                            other => !other.truthy(),
                        };
                        if falsy {
                            pc += arg as usize * UNIT;
                        }
                    }
                    PROBE => {
                        let id = info.probe_ids.get(arg as usize).copied().unwrap_or(u32::MAX);
                        if id == u32::MAX {
                            break Flow::Fault(format!("PROBE operand {arg} is not a probe handle"));
                        }
                        if let Err(msg) = hooks.fire(id, &mut self.registry) {
                            break Flow::Fault(msg);
                        }
                    }
                    PRINT => {
                        let n = arg as usize;
                        if stack.len() < n {
                            break Flow::Fault("value stack underflow".into());
                        }
                        let parts: Vec<String> = stack[stack.len() - n..].iter().map(|v| self.render_str(v)).collect();
                        stack.truncate(stack.len() - n);
                        let _ = writeln!(self.out, "{}", parts.join(" "));
                        stack.push(Value::None);
                    }
                    GET_RANGE_ITER => {
                        let v = pop!(stack);
                        match v {
                            Value::Int(n) => stack.push(Value::Range { next: 0, end: n }),
                            Value::Bool(b) => stack.push(Value::Range { next: 0, end: b as i64 }),
                            other => {
                                break Flow::Raise(Exception::new(
                                    ErrorKind::TypeError,
                                    format!("range() needs an int, not {}", other.type_name()),
                                ))
                            }
                        }
                    }
                    FOR_RANGE_NEXT => match stack.last_mut() {
                        Some(Value::Range { next, end }) => {
                            if *next < *end {
                                let i = *next;
                                *next += 1;
                                stack.push(Value::Int(i));
                            } else {
                                stack.pop();
                                pc += arg as usize * UNIT;
                            }
                        }
                        _ => break Flow::Fault("FOR_RANGE_NEXT without an iterator".into()),
                    },
                    MATCH_LITERAL => {
                        let Some(lit) = consts.get(arg as usize) else {
                            break Flow::Fault(format!("constant {arg} out of range"));
                        };
                        let Some(subject) = stack.last() else {
                            break Flow::Fault("value stack underflow".into());
                        };
                        let m = std::mem::discriminant(subject) == std::mem::discriminant(lit)
                            && value::values_equal(subject, lit);
                        stack.push(Value::Bool(m));
                    }
                    MAKE_FUNCTION => {
                        let v = pop!(stack);
                        let Value::Code(code) = v else {
                            break Flow::Fault("MAKE_FUNCTION without a code object".into());
                        };
                        let id = match self.registry.id_of(&code) {
                            Some(id) => id,
                            None => self.registry.register_tree(&code),
                        };
                        stack.push(Value::Func(id));
                    }
                    CALL => {
                        let n = arg as usize;
                        if stack.len() < n + 1 {
                            break Flow::Fault("value stack underflow".into());
                        }
                        let callee_at = stack.len() - n - 1;
                        match stack[callee_at].clone() {
                            Value::Func(id) => {
                                if frames.len() + 1 >= MAX_CALL_DEPTH {
                                    break Flow::Raise(Exception::new(
                                        ErrorKind::RecursionError,
                                        "maximum recursion depth exceeded",
                                    ));
                                }
                                let callee = match self.info_for_id(id) {
                                    Ok(i) => i,
                                    Err(e) => break Flow::Fault(e.to_string()),
                                };
                                if callee.code.arg_count as usize != n {
                                    break Flow::Raise(Exception::new(
                                        ErrorKind::TypeError,
                                        format!(
                                            "{}() takes {} arguments ({n} given)",
                                            callee.code.name, callee.code.arg_count
                                        ),
                                    ));
                                }
                                let mut locals: Vec<Option<Value>> = vec![None; callee.code.names.len()];
                                for (slot, v) in locals.iter_mut().zip(stack.drain(callee_at + 1..)) {
                                    *slot = Some(v);
                                }
                                stack.pop();
                                self.stats.calls += 1;
                                let frame = Self::new_frame(callee, stack.len(), Some(locals), FrameKind::Call);
                                if let Some(t) = tracer.as_deref_mut() {
                                    t.call(&frame.info.code);
                                }
                                f.pc = pc;
                                f.insn = start;
                                frames.push(std::mem::replace(&mut f, frame));
                                continue 'frames;
                            }
                            Value::Builtin(Builtin::Load) => {
                                let name = match &stack[callee_at + 1..] {
                                    [Value::Str(s)] => s.clone(),
                                    _ => {
                                        break Flow::Raise(Exception::new(
                                            ErrorKind::TypeError,
                                            "load() takes one string argument",
                                        ))
                                    }
                                };
                                stack.truncate(callee_at);
                                match hooks.load(&name, &info.code.source, &mut self.registry) {
                                    Ok(None) => stack.push(Value::None),
                                    Ok(Some(module)) => {
                                        if frames.len() + 1 >= MAX_CALL_DEPTH {
                                            hooks.module_finished(&module.source);
                                            break Flow::Raise(Exception::new(
                                                ErrorKind::RecursionError,
                                                "maximum recursion depth exceeded",
                                            ));
                                        }
                                        self.registry.register_tree(&module);
                                        let minfo = self.info_for(&module);
                                        let frame = Self::new_frame(minfo, stack.len(), None, FrameKind::Load);
                                        if let Some(t) = tracer.as_deref_mut() {
                                            t.call(&frame.info.code);
                                        }
                                        f.pc = pc;
                                        f.insn = start;
                                        frames.push(std::mem::replace(&mut f, frame));
                                        continue 'frames;
                                    }
                                    Err(e) => break Flow::Raise(e),
                                }
                            }
                            Value::Builtin(b) => {
                                let r = value::call_builtin(b, &stack[callee_at + 1..]);
                                stack.truncate(callee_at);
                                match r {
                                    Ok(v) => stack.push(v),
                                    Err(e) => break Flow::Raise(e),
                                }
                            }
                            other => {
                                break Flow::Raise(Exception::new(
                                    ErrorKind::TypeError,
                                    format!("'{}' object is not callable", other.type_name()),
                                ))
                            }
                        }
                    }
                    RETURN_VALUE | RETURN_CONST => {
                        let v = if op == RETURN_VALUE {
                            pop!(stack)
                        } else {
                            match consts.get(arg as usize) {
                                Some(v) => v.clone(),
                                None => break Flow::Fault(format!("constant {arg} out of range")),
                            }
                        };
                        stack.truncate(f.base);
                        if let Some(t) = tracer.as_deref_mut() {
                            t.ret();
                        }
                        let kind = f.kind;
                        let Some(caller) = frames.pop() else {
                            return ExitStatus::Ok;
                        };
                        let done = std::mem::replace(&mut f, caller);
                        if kind == FrameKind::Load {
                            hooks.module_finished(&done.info.code.source);
                            stack.push(Value::None);
                        } else {
                            stack.push(v);
                        }
                        continue 'frames;
                    }
                    RAISE => {
                        break Flow::Raise(Exception::new(ErrorKind::RuntimeError, "raised"));
                    }
                    other => break Flow::Fault(format!("unknown opcode {other:#04x} at {start}")),
                }
            };

            f.pc = pc;
            f.insn = start;
            match flow {
                Flow::Fault(msg) => return ExitStatus::Fault(format!("{}: {msg}", f.info.code.name)),
                Flow::Raise(exc) => {
                    // unwind to the innermost handler covering the failing instruction
                    loop {
                        let at = f.insn;
                        let handler = f.info.code.exc_table.iter().find(|e| e.start <= at && at < e.end).copied();
                        if let Some(h) = handler {
                            stack.truncate(f.base + h.depth as usize);
                            f.pc = h.handler;
                            break;
                        }
                        stack.truncate(f.base);
                        if let Some(t) = tracer.as_deref_mut() {
                            t.ret();
                        }
                        let kind = f.kind;
                        let Some(caller) = frames.pop() else {
                            return ExitStatus::Uncaught(exc);
                        };
                        let done = std::mem::replace(&mut f, caller);
                        if kind == FrameKind::Load {
                            hooks.module_finished(&done.info.code.source);
                        }
                    }
                }
            }
        }
    }
}

/// Result of [`run_code`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub status: ExitStatus,
    pub stdout: String,
    pub env: BTreeMap<String, String>,
    pub stats: VmStats,
}

/// Runs a single module with the given hooks, capturing output.
pub fn run_code(root: &Arc<CodeObject>, hooks: &mut dyn Hooks, tracer: Option<&mut dyn Tracer>) -> RunOutput {
    let mut buf: Vec<u8> = Vec::new();
    let (status, env, stats) = {
        let mut vm = Vm::new(&mut buf);
        let status = vm.run(root, hooks, tracer);
        (status, vm.environment(), vm.stats.clone())
    };
    RunOutput { status, stdout: String::from_utf8_lossy(&buf).into_owned(), env, stats }
}
