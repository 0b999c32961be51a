//! Lexing, parsing and coverable-universe enumeration for Mini.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod universe;

use thiserror::Error;

pub use parser::{parse, MAX_NESTING};
pub use universe::{enumerate_universe, CoverableUniverse};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}
