//! Runtime values and the operations the VM applies to them.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::code::{CodeObject, Const};
use crate::isa::{BinOp, CmpOp};

#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Arc<str>),
    Tuple(Arc<[Value]>),
    /// Function, by registry id.
    Func(u32),
    Builtin(Builtin),
    Code(Arc<CodeObject>),
    /// Live `range` iterator, only ever on the value stack.
    Range { next: i64, end: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Abs,
    Str,
    Int,
    Len,
    Load,
}

impl Builtin {
    pub fn lookup(name: &str) -> Option<Builtin> {
        Some(match name {
            "abs" => Builtin::Abs,
            "str" => Builtin::Str,
            "int" => Builtin::Int,
            "len" => Builtin::Len,
            "load" => Builtin::Load,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Abs => "abs",
            Builtin::Str => "str",
            Builtin::Int => "int",
            Builtin::Len => "len",
            Builtin::Load => "load",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Raised by the `raise` statement.
    RuntimeError,
    ZeroDivisionError,
    OverflowError,
    TypeError,
    ValueError,
    NameError,
    RecursionError,
    LoadError,
}

/// A Mini-level exception. Catchable by `try`/`except`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?}: {message}")]
pub struct Exception {
    pub kind: ErrorKind,
    pub message: String,
}

impl Exception {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Exception { kind, message: message.into() }
    }
}

fn type_error(message: String) -> Exception {
    Exception::new(ErrorKind::TypeError, message)
}

fn overflow() -> Exception {
    Exception::new(ErrorKind::OverflowError, "integer overflow")
}

fn zero_div() -> Exception {
    Exception::new(ErrorKind::ZeroDivisionError, "division by zero")
}

impl From<&Const> for Value {
    fn from(c: &Const) -> Value {
        match c {
            Const::None | Const::Probe(_) => Value::None,
            Const::Bool(b) => Value::Bool(*b),
            Const::Int(i) => Value::Int(*i),
            Const::Float(x) => Value::Float(*x),
            Const::Str(s) => Value::Str(s.clone()),
            Const::Tuple(items) => Value::Tuple(items.iter().map(Value::from).collect()),
            Const::Code(code) => Value::Code(code.clone()),
        }
    }
}

/// Formats a float the way Python's `repr` does: shortest round-trip digits,
/// fixed notation for exponents in [-4, 16), scientific otherwise.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{:e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if x < 0.0 { "-" } else { "" };
    if (-4..16).contains(&exp) {
        let n = digits.len() as i32;
        let body = if exp < 0 {
            format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
        } else if exp + 1 >= n {
            format!("{}{}.0", digits, "0".repeat((exp + 1 - n) as usize))
        } else {
            let (int, frac) = digits.split_at((exp + 1) as usize);
            format!("{int}.{frac}")
        };
        format!("{sign}{body}")
    } else {
        let mant = if digits.len() == 1 { digits } else { format!("{}.{}", &digits[..1], &digits[1..]) };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{mant}e{esign}{:02}", exp.abs())
    }
}

impl Value {
    pub fn truthy(&self) -> bool {
        match self {
            Value::None => false,
            Value::Bool(b) => *b,
            Value::Int(i) => *i != 0,
            Value::Float(x) => *x != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::Tuple(t) => !t.is_empty(),
            _ => true,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::None => "NoneType",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::Tuple(_) => "tuple",
            Value::Func(_) => "function",
            Value::Builtin(_) => "builtin",
            Value::Code(_) => "code",
            Value::Range { .. } => "range_iterator",
        }
    }

    /// Integer view of ints and bools.
    fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            Value::Bool(b) => Some(*b as i64),
            _ => None,
        }
    }

    fn as_float(&self) -> Option<f64> {
        match self {
            Value::Float(x) => Some(*x),
            other => other.as_int().map(|i| i as f64),
        }
    }

    /// `str()` form. Functions are rendered by the caller, which knows names.
    pub fn to_str(&self) -> String {
        match self {
            Value::Str(s) => s.to_string(),
            other => other.repr(),
        }
    }

    pub fn repr(&self) -> String {
        match self {
            Value::None => "None".into(),
            Value::Bool(true) => "True".into(),
            Value::Bool(false) => "False".into(),
            Value::Int(i) => i.to_string(),
            Value::Float(x) => format_float(*x),
            Value::Str(s) => format!("'{s}'"),
            Value::Tuple(items) => {
                let parts: Vec<String> = items.iter().map(Value::repr).collect();
                if parts.len() == 1 {
                    format!("({},)", parts[0])
                } else {
                    format!("({})", parts.join(", "))
                }
            }
            Value::Func(id) => format!("<function #{id}>"),
            Value::Builtin(b) => format!("<builtin {}>", b.name()),
            Value::Code(c) => format!("<code {}>", c.name),
            Value::Range { next, end } => format!("<range {next}..{end}>"),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        values_equal(self, other)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_str())
    }
}

/// Equality with numeric cross-type comparison (`1 == 1.0 == True`).
pub fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::None, Value::None) => true,
        (Value::Str(x), Value::Str(y)) => x == y,
        (Value::Tuple(x), Value::Tuple(y)) => x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| values_equal(p, q)),
        (Value::Func(x), Value::Func(y)) => x == y,
        (Value::Builtin(x), Value::Builtin(y)) => x == y,
        (Value::Code(x), Value::Code(y)) => Arc::ptr_eq(x, y),
        _ => match (a.as_int(), b.as_int()) {
            (Some(x), Some(y)) => x == y,
            _ => match (a.as_float(), b.as_float()) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            },
        },
    }
}

fn order(a: &Value, b: &Value) -> Result<Option<Ordering>, Exception> {
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => Ok(Some(x.cmp(y))),
        (Value::Tuple(x), Value::Tuple(y)) => {
            for (p, q) in x.iter().zip(y.iter()) {
                if !values_equal(p, q) {
                    return order(p, q);
                }
            }
            Ok(Some(x.len().cmp(&y.len())))
        }
        _ => match (a.as_int(), b.as_int()) {
            (Some(x), Some(y)) => Ok(Some(x.cmp(&y))),
            _ => match (a.as_float(), b.as_float()) {
                (Some(x), Some(y)) => Ok(x.partial_cmp(&y)),
                _ => Err(type_error(format!(
                    "'<' not supported between {} and {}",
                    a.type_name(),
                    b.type_name()
                ))),
            },
        },
    }
}

pub fn compare(op: CmpOp, a: &Value, b: &Value) -> Result<Value, Exception> {
    let r = match op {
        CmpOp::Eq => values_equal(a, b),
        CmpOp::Ne => !values_equal(a, b),
        CmpOp::Lt => order(a, b)? == Some(Ordering::Less),
        CmpOp::Le => matches!(order(a, b)?, Some(Ordering::Less | Ordering::Equal)),
        CmpOp::Gt => order(a, b)? == Some(Ordering::Greater),
        CmpOp::Ge => matches!(order(a, b)?, Some(Ordering::Greater | Ordering::Equal)),
    };
    Ok(Value::Bool(r))
}

fn floor_div_int(a: i64, b: i64) -> Result<i64, Exception> {
    if b == 0 {
        return Err(zero_div());
    }
    let q = a.checked_div(b).ok_or_else(overflow)?;
    Ok(if (a % b != 0) && ((a < 0) != (b < 0)) { q - 1 } else { q })
}

fn mod_int(a: i64, b: i64) -> Result<i64, Exception> {
    if b == 0 {
        return Err(zero_div());
    }
    let r = a.checked_rem(b).unwrap_or(0);
    Ok(if r != 0 && ((r < 0) != (b < 0)) { r + b } else { r })
}

fn mod_float(a: f64, b: f64) -> Result<f64, Exception> {
    if b == 0.0 {
        return Err(zero_div());
    }
    let r = a % b;
    Ok(if r != 0.0 && ((r < 0.0) != (b < 0.0)) { r + b } else { r })
}

fn repeat<T: Clone>(items: &[T], n: i64) -> Result<Vec<T>, Exception> {
    let n = n.max(0) as usize;
    if items.len().saturating_mul(n) > 1 << 24 {
        return Err(Exception::new(ErrorKind::OverflowError, "repetition too large"));
    }
    Ok(std::iter::repeat_n(items, n).flatten().cloned().collect())
}

pub fn binary(op: BinOp, a: &Value, b: &Value) -> Result<Value, Exception> {
    // `and` / `or` are evaluated eagerly but return an operand, as in Python.
    match op {
        BinOp::And => return Ok(if a.truthy() { b.clone() } else { a.clone() }),
        BinOp::Or => return Ok(if a.truthy() { a.clone() } else { b.clone() }),
        _ => {}
    }
    if let (Some(x), Some(y)) = (a.as_int(), b.as_int()) {
        return Ok(match op {
            BinOp::Add => Value::Int(x.checked_add(y).ok_or_else(overflow)?),
            BinOp::Sub => Value::Int(x.checked_sub(y).ok_or_else(overflow)?),
            BinOp::Mul => Value::Int(x.checked_mul(y).ok_or_else(overflow)?),
            BinOp::Div => {
                if y == 0 {
                    return Err(zero_div());
                }
                Value::Float(x as f64 / y as f64)
            }
            BinOp::FloorDiv => Value::Int(floor_div_int(x, y)?),
            BinOp::Mod => Value::Int(mod_int(x, y)?),
            BinOp::And | BinOp::Or => unreachable!(),
        });
    }
    if let (Some(x), Some(y)) = (a.as_float(), b.as_float()) {
        return Ok(Value::Float(match op {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => {
                if y == 0.0 {
                    return Err(zero_div());
                }
                x / y
            }
            BinOp::FloorDiv => {
                if y == 0.0 {
                    return Err(zero_div());
                }
                (x / y).floor()
            }
            BinOp::Mod => mod_float(x, y)?,
            BinOp::And | BinOp::Or => unreachable!(),
        }));
    }
    match (op, a, b) {
        (BinOp::Add, Value::Str(x), Value::Str(y)) => Ok(Value::Str(format!("{x}{y}").into())),
        (BinOp::Add, Value::Tuple(x), Value::Tuple(y)) => {
            Ok(Value::Tuple(x.iter().chain(y.iter()).cloned().collect()))
        }
        (BinOp::Mul, Value::Str(s), n) | (BinOp::Mul, n, Value::Str(s)) if n.as_int().is_some() => {
            let chars: Vec<char> = s.chars().collect();
            Ok(Value::Str(repeat(&chars, n.as_int().unwrap())?.into_iter().collect::<String>().into()))
        }
        (BinOp::Mul, Value::Tuple(t), n) | (BinOp::Mul, n, Value::Tuple(t)) if n.as_int().is_some() => {
            Ok(Value::Tuple(repeat(t, n.as_int().unwrap())?.into()))
        }
        _ => Err(type_error(format!(
            "unsupported operand types for {}: {} and {}",
            op.symbol(),
            a.type_name(),
            b.type_name()
        ))),
    }
}

pub fn negate(v: &Value) -> Result<Value, Exception> {
    match v {
        Value::Float(x) => Ok(Value::Float(-x)),
        other => match other.as_int() {
            Some(i) => Ok(Value::Int(i.checked_neg().ok_or_else(overflow)?)),
            None => Err(type_error(format!("bad operand type for unary -: {}", v.type_name()))),
        },
    }
}

/// Builtins other than `load`, which needs the loader.
pub fn call_builtin(b: Builtin, args: &[Value]) -> Result<Value, Exception> {
    let one = || -> Result<&Value, Exception> {
        match args {
            [v] => Ok(v),
            _ => Err(type_error(format!("{}() takes exactly one argument ({} given)", b.name(), args.len()))),
        }
    };
    match b {
        Builtin::Abs => {
            let v = one()?;
            match v {
                Value::Float(x) => Ok(Value::Float(x.abs())),
                other => match other.as_int() {
                    Some(i) => Ok(Value::Int(i.checked_abs().ok_or_else(overflow)?)),
                    None => Err(type_error(format!("bad operand type for abs(): {}", v.type_name()))),
                },
            }
        }
        Builtin::Str => Ok(Value::Str(one()?.to_str().into())),
        Builtin::Int => {
            let v = one()?;
            match v {
                Value::Float(x) if x.is_finite() && x.abs() < 9.2e18 => Ok(Value::Int(x.trunc() as i64)),
                Value::Float(_) => Err(overflow()),
                Value::Str(s) => s
                    .trim()
                    .parse()
                    .map(Value::Int)
                    .map_err(|_| Exception::new(ErrorKind::ValueError, format!("invalid literal for int(): '{s}'"))),
                other => other
                    .as_int()
                    .map(Value::Int)
                    .ok_or_else(|| type_error(format!("int() argument must be a number, not {}", v.type_name()))),
            }
        }
        Builtin::Len => match one()? {
            Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
            Value::Tuple(t) => Ok(Value::Int(t.len() as i64)),
            v => Err(type_error(format!("object of type {} has no len()", v.type_name()))),
        },
        Builtin::Load => Err(type_error("load() is handled by the loader".into())),
    }
}
