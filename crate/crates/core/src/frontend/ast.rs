//! Syntax tree for Mini.
//!
//! Every statement carries the line of its first token and a `synthetic`
//! flag. The parser never sets the flag; only the branch transform does.

use std::fmt::{self, Write as _};

pub use crate::isa::{BinOp, CmpOp};

/// Name the branch transform assigns its markers to. User code may not use it.
pub const BRANCH_NAME: &str = "_branch";

#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub file: String,
    pub body: Block,
}

pub type Block = Vec<Stmt>;

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: u32,
    pub col: u32,
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assign { target: String, value: Expr },
    Expr(Expr),
    /// `inline` is set for the single-line `if cond: stmt` form.
    If { test: Expr, body: Block, orelse: Block, inline: bool },
    While { test: Expr, body: Block, orelse: Block },
    ForRange { var: String, count: Expr, body: Block, orelse: Block },
    Match { subject: Expr, cases: Vec<Case> },
    Def { name: String, params: Vec<String>, body: Block },
    Return(Option<Expr>),
    Try { body: Block, handler: Handler },
    Raise,
    Pass,
    BranchMarker { origin: u32, dest: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub pattern: Pattern,
    pub body: Block,
    pub line: u32,
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Literal(Literal),
    Wildcard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Handler {
    pub line: u32,
    pub body: Block,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Lit(Literal),
    Name(String),
    Unary(UnaryOp, Box<Expr>),
    /// Arithmetic and the (eagerly evaluated) `and` / `or`.
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Compare(CmpOp, Box<Expr>, Box<Expr>),
    Call(Box<Expr>, Vec<Expr>),
    Print(Vec<Expr>),
    Tuple(Vec<Expr>),
}

impl Stmt {
    pub fn new(kind: StmtKind, line: u32, col: u32) -> Self {
        Stmt { kind, line, col, synthetic: false }
    }

    pub fn synthetic(kind: StmtKind, line: u32) -> Self {
        Stmt { kind, line, col: 0, synthetic: true }
    }

    /// Whether the statement is one of the branching constructs the
    /// transform makes explicit.
    pub fn is_branching(&self) -> bool {
        matches!(
            self.kind,
            StmtKind::If { .. } | StmtKind::While { .. } | StmtKind::ForRange { .. } | StmtKind::Match { .. }
        )
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => f.write_str(&crate::value::format_float(*x)),
            Literal::Str(s) => write!(f, "{s:?}"),
            Literal::Bool(true) => f.write_str("True"),
            Literal::Bool(false) => f.write_str("False"),
        }
    }
}

/// Renders a module as an indented s-expression. Synthetic nodes carry a
/// trailing `*` on their head symbol. The format is stable for golden tests.
pub fn to_sexpr(module: &Module) -> String {
    let mut out = String::new();
    let _ = write!(out, "(Module {:?}", module.file);
    write_block(&mut out, &module.body, 1);
    out.push_str(")\n");
    out
}

fn indent(out: &mut String, depth: usize) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn head(stmt_synthetic: bool, name: &str) -> String {
    if stmt_synthetic {
        format!("{name}*")
    } else {
        name.to_string()
    }
}

fn write_block(out: &mut String, block: &Block, depth: usize) {
    for stmt in block {
        indent(out, depth);
        write_stmt(out, stmt, depth);
    }
}

fn write_arm(out: &mut String, name: &str, block: &Block, depth: usize) {
    indent(out, depth);
    let _ = write!(out, "({name}");
    write_block(out, block, depth + 1);
    out.push(')');
}

fn write_stmt(out: &mut String, stmt: &Stmt, depth: usize) {
    let s = stmt.synthetic;
    let line = stmt.line;
    match &stmt.kind {
        StmtKind::Assign { target, value } => {
            let _ = write!(out, "({} {line} {target} {})", head(s, "Assign"), expr_sexpr(value));
        }
        StmtKind::Expr(e) => {
            let _ = write!(out, "({} {line} {})", head(s, "Expr"), expr_sexpr(e));
        }
        StmtKind::If { test, body, orelse, inline } => {
            let name = if *inline { "IfInline" } else { "If" };
            let _ = write!(out, "({} {line} {}", head(s, name), expr_sexpr(test));
            write_arm(out, "then", body, depth + 1);
            if !orelse.is_empty() {
                write_arm(out, "else", orelse, depth + 1);
            }
            out.push(')');
        }
        StmtKind::While { test, body, orelse } => {
            let _ = write!(out, "({} {line} {}", head(s, "While"), expr_sexpr(test));
            write_arm(out, "body", body, depth + 1);
            if !orelse.is_empty() {
                write_arm(out, "else", orelse, depth + 1);
            }
            out.push(')');
        }
        StmtKind::ForRange { var, count, body, orelse } => {
            let _ = write!(out, "({} {line} {var} {}", head(s, "ForRange"), expr_sexpr(count));
            write_arm(out, "body", body, depth + 1);
            if !orelse.is_empty() {
                write_arm(out, "else", orelse, depth + 1);
            }
            out.push(')');
        }
        StmtKind::Match { subject, cases } => {
            let _ = write!(out, "({} {line} {}", head(s, "Match"), expr_sexpr(subject));
            for case in cases {
                indent(out, depth + 1);
                let pat = match &case.pattern {
                    Pattern::Literal(l) => l.to_string(),
                    Pattern::Wildcard => "_".to_string(),
                };
                let _ = write!(out, "({} {} {pat}", head(case.synthetic, "Case"), case.line);
                write_block(out, &case.body, depth + 2);
                out.push(')');
            }
            out.push(')');
        }
        StmtKind::Def { name, params, body } => {
            let _ = write!(out, "({} {line} {name} ({})", head(s, "Def"), params.join(" "));
            write_block(out, body, depth + 1);
            out.push(')');
        }
        StmtKind::Return(value) => {
            let _ = write!(out, "({} {line}", head(s, "Return"));
            if let Some(v) = value {
                let _ = write!(out, " {}", expr_sexpr(v));
            }
            out.push(')');
        }
        StmtKind::Try { body, handler } => {
            let _ = write!(out, "({} {line}", head(s, "Try"));
            write_arm(out, "body", body, depth + 1);
            indent(out, depth + 1);
            let _ = write!(out, "(Except {}", handler.line);
            write_block(out, &handler.body, depth + 2);
            out.push_str("))");
        }
        StmtKind::Raise => {
            let _ = write!(out, "({} {line})", head(s, "Raise"));
        }
        StmtKind::Pass => {
            let _ = write!(out, "({} {line})", head(s, "Pass"));
        }
        StmtKind::BranchMarker { origin, dest } => {
            let _ = write!(out, "({} {line} {origin} {dest})", head(s, "Marker"));
        }
    }
}

pub fn expr_sexpr(expr: &Expr) -> String {
    match &expr.kind {
        ExprKind::Lit(l) => l.to_string(),
        ExprKind::Name(n) => n.clone(),
        ExprKind::Unary(UnaryOp::Neg, e) => format!("(neg {})", expr_sexpr(e)),
        ExprKind::Unary(UnaryOp::Not, e) => format!("(not {})", expr_sexpr(e)),
        ExprKind::Binary(op, a, b) => format!("({} {} {})", op.symbol(), expr_sexpr(a), expr_sexpr(b)),
        ExprKind::Compare(op, a, b) => format!("({} {} {})", op.symbol(), expr_sexpr(a), expr_sexpr(b)),
        ExprKind::Call(f, args) => {
            let mut s = format!("(call {}", expr_sexpr(f));
            for a in args {
                s.push(' ');
                s.push_str(&expr_sexpr(a));
            }
            s.push(')');
            s
        }
        ExprKind::Print(args) => {
            let mut s = "(print".to_string();
            for a in args {
                s.push(' ');
                s.push_str(&expr_sexpr(a));
            }
            s.push(')');
            s
        }
        ExprKind::Tuple(items) => {
            let mut s = "(tuple".to_string();
            for a in items {
                s.push(' ');
                s.push_str(&expr_sexpr(a));
            }
            s.push(')');
            s
        }
    }
}
