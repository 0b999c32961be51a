//! Programs whose jumps need wider operands once probes are inserted.

use std::collections::BTreeSet;
use std::sync::Arc;

use decov::code::{CodeObject, Const, LineEntry};
use decov::compile::compile;
use decov::frontend::{enumerate_universe, parse, CoverableUniverse};
use decov::instrument::{insert_probes, InstrumentMode, InstrumentationMap};
use decov::isa::{decode_all, encode, encode_into, Opcode, UNIT};
use decov::transform::transform;

/// `if a > 0 { ... }` around `body_lines` increments, then a print.
pub fn if_body_source(body_lines: usize) -> String {
    let mut s = String::from("a = 1\nif a > 0 {\n");
    for _ in 0..body_lines {
        s.push_str("  a = a + 1\n");
    }
    s.push_str("}\nprint(a)\n");
    s
}

pub fn build_source(src: &str) -> (Arc<CodeObject>, CoverableUniverse) {
    let m = transform(parse(src, "wide.mini").unwrap());
    (compile(&m).unwrap(), enumerate_universe(&m))
}

/// Largest `EXTENDED_ARG` prefix count on any conditional jump in `code`.
pub fn widest_branch(code: &CodeObject) -> usize {
    decode_all(&code.code)
        .unwrap()
        .iter()
        .filter(|d| d.op == Opcode::PopJumpIfFalse)
        .map(|d| d.prefixes())
        .max()
        .unwrap_or(0)
}

/// Body sizes (in increment lines) whose conditional jump needs `before`
/// prefixes plain and one more once probes are in: 1 and 2 prefixes.
pub const SOURCE_CASES: [(usize, usize); 2] = [(50, 0), (12_000, 1)];

/// Hand-built code whose conditional jump spans `0xFF_FFFF` NOP units, the
/// most two prefixes can encode. Line 2 starts inside the span, so its probe
/// pushes the jump to three prefixes.
pub fn three_prefix_code() -> (Arc<CodeObject>, CoverableUniverse) {
    let span: usize = 0xFF_FFFF;
    let mut code = Vec::with_capacity((span + 8) * UNIT);
    encode_into(&mut code, Opcode::LoadConst, 0, 1);
    encode_into(&mut code, Opcode::PopJumpIfFalse, span as u32, 1);
    let body = code.len();
    let nop = encode(Opcode::Nop, 0);
    for _ in 0..span {
        code.extend_from_slice(&nop);
    }
    let tail = code.len();
    encode_into(&mut code, Opcode::ReturnConst, 1, 1);
    let obj = CodeObject {
        name: "<module>".into(),
        source: "wide3.mini".into(),
        first_line: 1,
        arg_count: 0,
        code,
        consts: vec![Const::Bool(true), Const::None],
        names: Vec::new(),
        line_table: vec![
            LineEntry { start: 0, line: 1 },
            LineEntry { start: body, line: 2 },
            LineEntry { start: body + span / 2 * UNIT, line: 3 },
            LineEntry { start: tail, line: 4 },
        ],
        exc_table: Vec::new(),
    };
    let universe = CoverableUniverse {
        file: "wide3.mini".into(),
        lines: BTreeSet::from([1, 2, 3, 4]),
        branches: BTreeSet::new(),
    };
    (Arc::new(obj), universe)
}

pub fn instrument(code: &Arc<CodeObject>, u: &CoverableUniverse) -> (Arc<CodeObject>, InstrumentationMap) {
    insert_probes(code, u, InstrumentMode::LineBranch, 0).expect("instrumentation")
}
