//! Human-readable listings of code objects.
//!
//! Every code unit gets its own row, `EXTENDED_ARG` prefixes included, so a
//! listing carries enough to rebuild the exact bytes. Rows show the line
//! number where a line-table entry starts (`-` for artificial code) and `>>`
//! at jump targets and handler starts.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::code::CodeObject;
use crate::isa::{decode_all, BinOp, CmpOp, DecodeError, Opcode, UNIT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{function}: {source}")]
pub struct DisasmError {
    pub function: String,
    pub source: DecodeError,
}

/// Disassembles `code` and every nested code object, parents first.
pub fn disassemble(code: &CodeObject) -> Result<String, DisasmError> {
    let mut out = String::new();
    let mut err = None;
    code.walk(&mut |path, node| {
        if err.is_some() {
            return;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        if let Err(e) = disassemble_one(node, path, &mut out) {
            err = Some(e);
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn disassemble_one(code: &CodeObject, path: &[u32], out: &mut String) -> Result<(), DisasmError> {
    let insns = decode_all(&code.code).map_err(|source| DisasmError { function: code.name.clone(), source })?;
    let path_text: Vec<String> = path.iter().map(|p| p.to_string()).collect();
    let _ = writeln!(
        out,
        "code {} path [{}] source {:?} line {} args {}",
        code.name,
        path_text.join(" "),
        code.source,
        code.first_line,
        code.arg_count
    );

    let mut targets: HashSet<usize> = insns.iter().filter_map(|d| d.jump_target()).collect();
    targets.extend(code.exc_table.iter().map(|e| e.handler));
    let entries: std::collections::HashMap<usize, u32> =
        code.line_table.iter().map(|e| (e.start, e.line)).collect();

    for d in &insns {
        let line_col = match entries.get(&d.offset) {
            Some(0) => "-".to_string(),
            Some(l) => l.to_string(),
            None => String::new(),
        };
        let mark = if targets.contains(&d.offset) { ">>" } else { "" };
        for p in 0..d.prefixes() {
            let off = d.offset + p * UNIT;
            let byte = code.code[off + 1];
            let (lc, mk) = if p == 0 { (line_col.as_str(), mark) } else { ("", "") };
            let _ = writeln!(out, "{lc:>5} {mk:>2} {off:>6} {:<18} {byte:>5}", Opcode::ExtendedArg.name());
        }
        let (lc, mk) = if d.prefixes() == 0 { (line_col.as_str(), mark) } else { ("", "") };
        let op_off = d.end() - UNIT;
        let note = annotate(code, d.op, d.arg, d.jump_target());
        let _ = write!(out, "{lc:>5} {mk:>2} {op_off:>6} {:<18} {:>5}", d.op.name(), d.arg);
        if !note.is_empty() {
            let _ = write!(out, " ({note})");
        }
        out.push('\n');
    }

    let _ = writeln!(out, "consts:");
    for (i, c) in code.consts.iter().enumerate() {
        let _ = writeln!(out, "  {i}: {c}");
    }
    let names: Vec<&str> = code.names.iter().map(|n| &**n).collect();
    let _ = writeln!(out, "names: {}", names.join(" "));
    let table: Vec<String> = code.line_table.iter().map(|e| format!("{}:{}", e.start, e.line)).collect();
    let _ = writeln!(out, "lines: {}", table.join(" "));
    let _ = writeln!(out, "exceptions:");
    for e in &code.exc_table {
        let _ = writeln!(out, "  {} to {} -> {} depth {}", e.start, e.end, e.handler, e.depth);
    }
    Ok(())
}

fn annotate(code: &CodeObject, op: Opcode, arg: u32, target: Option<usize>) -> String {
    match op {
        Opcode::LoadConst | Opcode::ReturnConst | Opcode::MatchLiteral | Opcode::Probe => {
            code.consts.get(arg as usize).map(|c| c.to_string()).unwrap_or_else(|| "?".into())
        }
        Opcode::LoadName | Opcode::StoreName => {
            code.names.get(arg as usize).map(|n| n.to_string()).unwrap_or_else(|| "?".into())
        }
        Opcode::BinaryOp => BinOp::from_arg(arg).map_or("?", |o| o.symbol()).to_string(),
        Opcode::CompareOp => CmpOp::from_arg(arg).map_or("?", |o| o.symbol()).to_string(),
        Opcode::Nop if arg > 0 => format!("skip {arg}"),
        _ => match target {
            Some(t) => format!("to {t}"),
            None if op.is_jump() => "to ?".into(),
            None => String::new(),
        },
    }
}
