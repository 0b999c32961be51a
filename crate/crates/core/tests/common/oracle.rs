//! Reference coverage by direct interpretation of the syntax tree, with no
//! bytecode involved.
//!
//! Executed lines are the lines of statements that start, of `case` patterns
//! that are tested and of handlers that are entered. A branch `(origin,
//! dest)` is taken when a branching statement picks an arm; `dest` is the
//! line of the next thing that same frame executes, or `origin` itself when
//! the frame ends first.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use decov::frontend::ast::*;
use decov::value::{self, Builtin, ErrorKind, Exception, Value};

pub const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Uncaught(ErrorKind),
}

#[derive(Debug, Clone)]
pub struct OracleRun {
    pub lines: BTreeSet<u32>,
    pub branches: BTreeSet<(u32, u32)>,
    pub stdout: String,
    pub outcome: Outcome,
    pub env: BTreeMap<String, String>,
}

/// Lines a report should account for: every statement, `case` and handler.
pub fn line_universe(module: &Module) -> BTreeSet<u32> {
    fn block(b: &Block, out: &mut BTreeSet<u32>) {
        for s in b {
            out.insert(s.line);
            match &s.kind {
                StmtKind::If { body, orelse, .. }
                | StmtKind::While { body, orelse, .. }
                | StmtKind::ForRange { body, orelse, .. } => {
                    block(body, out);
                    block(orelse, out);
                }
                StmtKind::Match { cases, .. } => {
                    for c in cases {
                        out.insert(c.line);
                        block(&c.body, out);
                    }
                }
                StmtKind::Def { body, .. } => block(body, out),
                StmtKind::Try { body, handler } => {
                    block(body, out);
                    out.insert(handler.line);
                    block(&handler.body, out);
                }
                _ => {}
            }
        }
    }
    let mut out = BTreeSet::new();
    block(&module.body, &mut out);
    out
}

enum Flow {
    Normal,
    Return(Value),
}

type Exec<T> = Result<T, Exception>;

struct Frame {
    locals: Option<HashMap<String, Value>>,
    pending: Option<u32>,
}

struct Interp<'m> {
    globals: HashMap<String, Value>,
    functions: Vec<(&'m str, &'m [String], &'m Block)>,
    frames: Vec<Frame>,
    lines: BTreeSet<u32>,
    branches: BTreeSet<(u32, u32)>,
    stdout: String,
    steps: u64,
}

/// Interprets `module`. `step_limit` bounds executed statements so a bad
/// generator cannot hang the test.
pub fn run(module: &Module, step_limit: u64) -> OracleRun {
    let mut it = Interp {
        globals: HashMap::new(),
        functions: Vec::new(),
        frames: vec![Frame { locals: None, pending: None }],
        lines: BTreeSet::new(),
        branches: BTreeSet::new(),
        stdout: String::new(),
        steps: step_limit,
    };
    let outcome = match it.block(&module.body) {
        Ok(_) => Outcome::Ok,
        Err(e) => Outcome::Uncaught(e.kind),
    };
    it.end_frame();
    let env = it
        .globals
        .iter()
        .map(|(k, v)| (k.clone(), it.render(v)))
        .collect();
    OracleRun { lines: it.lines, branches: it.branches, stdout: it.stdout, outcome, env }
}

fn lit(l: &Literal) -> Value {
    match l {
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(x) => Value::Float(*x),
        Literal::Str(s) => Value::Str(Arc::from(s.as_str())),
        Literal::Bool(b) => Value::Bool(*b),
    }
}

impl<'m> Interp<'m> {
    fn event(&mut self, line: u32) {
        self.lines.insert(line);
        let frame = self.frames.last_mut().unwrap();
        if let Some(origin) = frame.pending.take() {
            self.branches.insert((origin, line));
        }
    }

    fn take_arm(&mut self, origin: u32) {
        self.frames.last_mut().unwrap().pending = Some(origin);
    }

    fn end_frame(&mut self) {
        if let Some(f) = self.frames.last_mut() {
            if let Some(origin) = f.pending.take() {
                self.branches.insert((origin, origin));
            }
        }
    }

    fn render(&self, v: &Value) -> String {
        match v {
            Value::Func(id) => format!("<function {}>", self.functions[*id as usize].0),
            other => other.repr(),
        }
    }

    fn render_str(&self, v: &Value) -> String {
        match v {
            Value::Str(s) => s.to_string(),
            other => self.render(other),
        }
    }

    fn store(&mut self, name: &str, v: Value) {
        match &mut self.frames.last_mut().unwrap().locals {
            Some(l) => {
                l.insert(name.to_string(), v);
            }
            None => {
                self.globals.insert(name.to_string(), v);
            }
        }
    }

    fn load(&self, name: &str) -> Exec<Value> {
        if let Some(Some(v)) = self.frames.last().unwrap().locals.as_ref().map(|l| l.get(name)) {
            return Ok(v.clone());
        }
        if let Some(v) = self.globals.get(name) {
            return Ok(v.clone());
        }
        match Builtin::lookup(name) {
            Some(b) => Ok(Value::Builtin(b)),
            None => Err(Exception::new(ErrorKind::NameError, format!("name '{name}' is not defined"))),
        }
    }

    fn block(&mut self, b: &'m Block) -> Exec<Flow> {
        for s in b {
            if let Flow::Return(v) = self.stmt(s)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn stmt(&mut self, s: &'m Stmt) -> Exec<Flow> {
        assert!(self.steps > 0, "oracle step limit exceeded");
        self.steps -= 1;
        let line = s.line;
        self.event(line);
        match &s.kind {
            StmtKind::Assign { target, value } => {
                let v = self.expr(value)?;
                self.store(target, v);
            }
            StmtKind::Expr(e) => {
                self.expr(e)?;
            }
            StmtKind::Pass => {}
            StmtKind::Raise => return Err(Exception::new(ErrorKind::RuntimeError, "raised")),
            StmtKind::Return(e) => {
                let v = match e {
                    Some(e) => self.expr(e)?,
                    None => Value::None,
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::If { test, body, orelse, .. } => {
                let c = self.expr(test)?.truthy();
                self.take_arm(line);
                return if c { self.block(body) } else { self.block(orelse) };
            }
            StmtKind::While { test, body, orelse } => {
                let mut first = true;
                loop {
                    if !first {
                        self.event(line);
                    }
                    first = false;
                    if !self.expr(test)?.truthy() {
                        break;
                    }
                    self.take_arm(line);
                    if let Flow::Return(v) = self.block(body)? {
                        return Ok(Flow::Return(v));
                    }
                }
                self.take_arm(line);
                return self.block(orelse);
            }
            StmtKind::ForRange { var, count, body, orelse } => {
                let n = match self.expr(count)? {
                    Value::Int(n) => n,
                    Value::Bool(b) => b as i64,
                    other => {
                        return Err(Exception::new(
                            ErrorKind::TypeError,
                            format!("range() needs an int, not {}", other.type_name()),
                        ))
                    }
                };
                let mut i = 0;
                let mut first = true;
                loop {
                    if !first {
                        self.event(line);
                    }
                    first = false;
                    if i >= n {
                        break;
                    }
                    self.store(var, Value::Int(i));
                    i += 1;
                    self.take_arm(line);
                    if let Flow::Return(v) = self.block(body)? {
                        return Ok(Flow::Return(v));
                    }
                }
                self.take_arm(line);
                return self.block(orelse);
            }
            StmtKind::Match { subject, cases } => {
                let v = self.expr(subject)?;
                for case in cases {
                    self.event(case.line);
                    let hit = match &case.pattern {
                        Pattern::Wildcard => true,
                        Pattern::Literal(l) => {
                            let l = lit(l);
                            std::mem::discriminant(&v) == std::mem::discriminant(&l) && value::values_equal(&v, &l)
                        }
                    };
                    if hit {
                        self.take_arm(line);
                        return self.block(&case.body);
                    }
                }
                self.take_arm(line);
            }
            StmtKind::Def { name, params, body } => {
                self.functions.push((name.as_str(), params.as_slice(), body));
                let id = self.functions.len() as u32 - 1;
                self.store(name, Value::Func(id));
            }
            StmtKind::Try { body, handler } => match self.block(body) {
                Ok(flow) => return Ok(flow),
                Err(_) => {
                    self.event(handler.line);
                    return self.block(&handler.body);
                }
            },
            StmtKind::BranchMarker { .. } => panic!("oracle runs untransformed trees"),
        }
        Ok(Flow::Normal)
    }

    fn expr(&mut self, e: &'m Expr) -> Exec<Value> {
        match &e.kind {
            ExprKind::Lit(l) => Ok(lit(l)),
            ExprKind::Name(n) => self.load(n),
            ExprKind::Unary(UnaryOp::Neg, inner) => {
                let v = self.expr(inner)?;
                value::negate(&v)
            }
            ExprKind::Unary(UnaryOp::Not, inner) => Ok(Value::Bool(!self.expr(inner)?.truthy())),
            ExprKind::Binary(op, a, b) => {
                let a = self.expr(a)?;
                let b = self.expr(b)?;
                value::binary(*op, &a, &b)
            }
            ExprKind::Compare(op, a, b) => {
                let a = self.expr(a)?;
                let b = self.expr(b)?;
                value::compare(*op, &a, &b)
            }
            ExprKind::Tuple(items) => {
                let mut vs = Vec::new();
                for i in items {
                    vs.push(self.expr(i)?);
                }
                Ok(Value::Tuple(vs.into()))
            }
            ExprKind::Print(args) => {
                let mut parts = Vec::new();
                for a in args {
                    let v = self.expr(a)?;
                    parts.push(self.render_str(&v));
                }
                self.stdout.push_str(&parts.join(" "));
                self.stdout.push('\n');
                Ok(Value::None)
            }
            ExprKind::Call(f, args) => {
                let callee = self.expr(f)?;
                let mut vs = Vec::new();
                for a in args {
                    vs.push(self.expr(a)?);
                }
                self.call(callee, vs)
            }
        }
    }

    fn call(&mut self, callee: Value, args: Vec<Value>) -> Exec<Value> {
        match callee {
            Value::Func(id) => {
                if self.frames.len() >= MAX_DEPTH {
                    return Err(Exception::new(ErrorKind::RecursionError, "maximum recursion depth exceeded"));
                }
                let (name, params, body) = self.functions[id as usize];
                if params.len() != args.len() {
                    return Err(Exception::new(ErrorKind::TypeError, format!("{name}() arity")));
                }
                let locals = params.iter().cloned().zip(args).collect();
                self.frames.push(Frame { locals: Some(locals), pending: None });
                let r = self.block(body);
                self.end_frame();
                self.frames.pop();
                match r? {
                    Flow::Return(v) => Ok(v),
                    Flow::Normal => Ok(Value::None),
                }
            }
            Value::Builtin(Builtin::Load) => Err(Exception::new(ErrorKind::LoadError, "no loader in the oracle")),
            Value::Builtin(b) => value::call_builtin(b, &args),
            other => Err(Exception::new(ErrorKind::TypeError, format!("'{}' is not callable", other.type_name()))),
        }
    }
}
