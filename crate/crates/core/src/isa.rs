//! The decov instruction set.
//!
//! Word-code: every unit is two bytes, an opcode and an 8-bit operand. Wider
//! operands are built from up to three `EXTENDED_ARG` prefix units, each of
//! which contributes the next-higher 8 bits (big-endian accumulation). Jump
//! operands count code units, not bytes.

use std::fmt;

/// Size of one code unit in bytes.
pub const UNIT: usize = 2;

/// Maximum number of `EXTENDED_ARG` prefixes in front of one instruction.
pub const MAX_EXTENDED_ARGS: usize = 3;

macro_rules! opcodes {
    ($($name:ident = $byte:literal => $text:literal,)*) => {
        /// One opcode of the decov ISA.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum Opcode {
            $($name = $byte,)*
        }

        impl Opcode {
            /// All opcodes, in byte order.
            pub const ALL: &'static [Opcode] = &[$(Opcode::$name,)*];

            pub fn from_byte(byte: u8) -> Option<Opcode> {
                match byte {
                    $($byte => Some(Opcode::$name),)*
                    _ => None,
                }
            }

            /// The mnemonic used by the disassembler.
            pub fn name(self) -> &'static str {
                match self {
                    $(Opcode::$name => $text,)*
                }
            }

            pub fn from_name(name: &str) -> Option<Opcode> {
                match name {
                    $($text => Some(Opcode::$name),)*
                    _ => None,
                }
            }
        }
    };
}

opcodes! {
    Nop = 0 => "NOP",
    ExtendedArg = 1 => "EXTENDED_ARG",
    LoadConst = 2 => "LOAD_CONST",
    LoadName = 3 => "LOAD_NAME",
    StoreName = 4 => "STORE_NAME",
    PopTop = 5 => "POP_TOP",
    UnaryNeg = 6 => "UNARY_NEG",
    UnaryNot = 7 => "UNARY_NOT",
    BinaryOp = 8 => "BINARY_OP",
    CompareOp = 9 => "COMPARE_OP",
    BuildTuple = 10 => "BUILD_TUPLE",
    JumpForward = 11 => "JUMP_FORWARD",
    JumpBackward = 12 => "JUMP_BACKWARD",
    PopJumpIfFalse = 13 => "POP_JUMP_IF_FALSE",
    Call = 14 => "CALL",
    MakeFunction = 15 => "MAKE_FUNCTION",
    ReturnValue = 16 => "RETURN_VALUE",
    ReturnConst = 17 => "RETURN_CONST",
    Raise = 18 => "RAISE",
    Probe = 19 => "PROBE",
    Print = 20 => "PRINT",
    GetRangeIter = 21 => "GET_RANGE_ITER",
    ForRangeNext = 22 => "FOR_RANGE_NEXT",
    MatchLiteral = 23 => "MATCH_LITERAL",
}

/// Direction in which a jump operand is applied, relative to the offset of
/// the instruction that follows the jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpKind {
    Forward,
    Backward,
}

impl Opcode {
    pub fn jump_kind(self) -> Option<JumpKind> {
        match self {
            Opcode::JumpForward | Opcode::PopJumpIfFalse | Opcode::ForRangeNext => {
                Some(JumpKind::Forward)
            }
            Opcode::JumpBackward => Some(JumpKind::Backward),
            _ => None,
        }
    }

    pub fn is_jump(self) -> bool {
        self.jump_kind().is_some()
    }

    /// Instructions after which control never falls through.
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            Opcode::JumpForward
                | Opcode::JumpBackward
                | Opcode::ReturnValue
                | Opcode::ReturnConst
                | Opcode::Raise
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Operand of `BINARY_OP`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum BinOp {
    Add = 0,
    Sub = 1,
    Mul = 2,
    Div = 3,
    FloorDiv = 4,
    Mod = 5,
    And = 6,
    Or = 7,
}

impl BinOp {
    pub fn from_arg(arg: u32) -> Option<BinOp> {
        Some(match arg {
            0 => BinOp::Add,
            1 => BinOp::Sub,
            2 => BinOp::Mul,
            3 => BinOp::Div,
            4 => BinOp::FloorDiv,
            5 => BinOp::Mod,
            6 => BinOp::And,
            7 => BinOp::Or,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }
}

/// Operand of `COMPARE_OP`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum CmpOp {
    Eq = 0,
    Ne = 1,
    Lt = 2,
    Le = 3,
    Gt = 4,
    Ge = 5,
}

impl CmpOp {
    pub fn from_arg(arg: u32) -> Option<CmpOp> {
        Some(match arg {
            0 => CmpOp::Eq,
            1 => CmpOp::Ne,
            2 => CmpOp::Lt,
            3 => CmpOp::Le,
            4 => CmpOp::Gt,
            5 => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Number of `EXTENDED_ARG` prefixes needed to encode `arg`.
pub fn prefixes_for(arg: u32) -> usize {
    match arg {
        0..=0xFF => 0,
        0x100..=0xFFFF => 1,
        0x1_0000..=0xFF_FFFF => 2,
        _ => 3,
    }
}

/// Encodes one instruction, padding with `EXTENDED_ARG 0` up to `min_units`.
pub fn encode_into(out: &mut Vec<u8>, op: Opcode, arg: u32, min_units: usize) {
    let prefixes = prefixes_for(arg).max(min_units.saturating_sub(1));
    debug_assert!(prefixes <= MAX_EXTENDED_ARGS);
    for i in (1..=prefixes).rev() {
        let byte = if i >= 4 { 0 } else { (arg >> (8 * i)) as u8 };
        out.push(Opcode::ExtendedArg as u8);
        out.push(byte);
    }
    out.push(op as u8);
    out.push(arg as u8);
}

pub fn encode(op: Opcode, arg: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(UNIT * (1 + prefixes_for(arg)));
    encode_into(&mut out, op, arg, 1);
    out
}

/// A fully decoded instruction: the opcode, its accumulated operand, and the
/// span it occupies including any `EXTENDED_ARG` prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoded {
    pub offset: usize,
    pub op: Opcode,
    pub arg: u32,
    /// Length in bytes, prefixes included.
    pub len: usize,
}

impl Decoded {
    pub fn end(&self) -> usize {
        self.offset + self.len
    }

    pub fn units(&self) -> usize {
        self.len / UNIT
    }

    pub fn prefixes(&self) -> usize {
        self.units() - 1
    }

    /// Absolute byte offset a jump lands on, if this is a jump.
    pub fn jump_target(&self) -> Option<usize> {
        let span = self.arg as usize * UNIT;
        match self.op.jump_kind()? {
            JumpKind::Forward => Some(self.end() + span),
            JumpKind::Backward => self.end().checked_sub(span),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("offset {0}: code length is not a whole number of units")]
    OddLength(usize),
    #[error("offset {offset}: unknown opcode {byte:#04x}")]
    UnknownOpcode { offset: usize, byte: u8 },
    #[error("offset {0}: more than three EXTENDED_ARG prefixes")]
    TooManyPrefixes(usize),
    #[error("offset {0}: EXTENDED_ARG at end of code")]
    DanglingPrefix(usize),
}

/// Decodes the instruction starting at `offset`.
pub fn decode_at(code: &[u8], offset: usize) -> Result<Decoded, DecodeError> {
    let mut pc = offset;
    let mut arg: u32 = 0;
    let mut prefixes = 0;
    loop {
        if pc + 1 >= code.len() {
            return Err(if pc < code.len() {
                DecodeError::OddLength(pc)
            } else {
                DecodeError::DanglingPrefix(offset)
            });
        }
        let byte = code[pc];
        let op = Opcode::from_byte(byte).ok_or(DecodeError::UnknownOpcode { offset: pc, byte })?;
        arg = (arg << 8) | code[pc + 1] as u32;
        pc += UNIT;
        if op == Opcode::ExtendedArg {
            prefixes += 1;
            if prefixes > MAX_EXTENDED_ARGS {
                return Err(DecodeError::TooManyPrefixes(offset));
            }
            continue;
        }
        return Ok(Decoded { offset, op, arg, len: pc - offset });
    }
}

/// Iterates the logical instructions of a code sequence.
pub fn decode_all(code: &[u8]) -> Result<Vec<Decoded>, DecodeError> {
    if !code.len().is_multiple_of(UNIT) {
        return Err(DecodeError::OddLength(code.len() - 1));
    }
    let mut out = Vec::with_capacity(code.len() / UNIT);
    let mut pc = 0;
    while pc < code.len() {
        let insn = decode_at(code, pc)?;
        pc = insn.end();
        out.push(insn);
    }
    Ok(out)
}
