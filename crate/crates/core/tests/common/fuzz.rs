//! Random Mini programs that always terminate: loops are bounded, functions
//! only call functions defined before them, and values stay small.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VARS: [&str; 4] = ["a", "b", "c", "d"];

struct Gen {
    rng: ChaCha8Rng,
    out: Vec<String>,
    loop_counter: usize,
    functions: Vec<(String, usize)>,
    in_function: bool,
}

pub fn program(seed: u64) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
        loop_counter: 0,
        functions: Vec::new(),
        in_function: false,
    };
    for v in VARS {
        let n = g.rng.gen_range(-3..10);
        g.out.push(format!("{v} = {n}"));
    }
    let n_funcs = g.rng.gen_range(0..3);
    for i in 0..n_funcs {
        g.function(i);
    }
    let n = g.rng.gen_range(3..9);
    for _ in 0..n {
        g.statement(0, 0);
    }
    if g.rng.gen_bool(0.5) {
        g.out.push("print(a, b, c, d)".into());
    }
    let mut text = g.out.join("\n");
    text.push('\n');
    text
}

impl Gen {
    fn indent(depth: usize) -> String {
        "  ".repeat(depth)
    }

    fn var(&mut self) -> &'static str {
        VARS.choose(&mut self.rng).unwrap()
    }

    fn atom(&mut self) -> String {
        match self.rng.gen_range(0..20) {
            0..=9 => self.var().to_string(),
            10..=18 => self.rng.gen_range(0..7).to_string(),
            _ => ["True", "False", "\"s\"", "1.5"].choose(&mut self.rng).unwrap().to_string(),
        }
    }

    fn expr(&mut self, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.4) {
            return self.atom();
        }
        let a = self.expr(depth - 1);
        let b = self.expr(depth - 1);
        match self.rng.gen_range(0..12) {
            0 | 1 => format!("({a} + {b}) % 97"),
            2 => format!("{a} - {b}"),
            3 => format!("({a} * {b}) % 89"),
            4 => format!("{a} // {b}"),
            5 => format!("{a} % 7"),
            6 => format!("-{a}"),
            7 => format!("abs({a})"),
            8 => format!("{a} and {b}"),
            9 => format!("{a} or {b}"),
            10 if !self.functions.is_empty() => {
                let (name, arity) = self.functions.choose(&mut self.rng).unwrap().clone();
                let args: Vec<String> = (0..arity).map(|_| self.atom()).collect();
                format!("{name}({})", args.join(", "))
            }
            _ => format!("{a} + 1"),
        }
    }

    fn cond(&mut self) -> String {
        let a = self.expr(1);
        let b = self.expr(1);
        let op = ["<", "<=", ">", ">=", "==", "!="].choose(&mut self.rng).unwrap();
        match self.rng.gen_range(0..8) {
            0 => format!("not {a} {op} {b}"),
            1 => self.var().to_string(),
            _ => format!("{a} {op} {b}"),
        }
    }

    fn simple(&mut self) -> String {
        match self.rng.gen_range(0..12) {
            0..=5 => {
                let v = self.var();
                let e = self.expr(2);
                format!("{v} = {e}")
            }
            6 => {
                let e = self.expr(1);
                let f = self.expr(1);
                if self.rng.gen_bool(0.3) {
                    format!("print(({e}, {f}))")
                } else {
                    format!("print({e})")
                }
            }
            7 => "pass".into(),
            8 if self.rng.gen_bool(0.15) => "raise".into(),
            9 if self.in_function => {
                let e = self.expr(1);
                format!("return {e}")
            }
            10 => {
                let v = self.var();
                let w = self.var();
                format!("{v} = {v} + 1; {w} = {w} % 5")
            }
            _ => {
                let v = self.var();
                format!("{v} = {v} - 1")
            }
        }
    }

    fn push(&mut self, depth: usize, text: String) {
        self.out.push(format!("{}{text}", Self::indent(depth)));
    }

    fn body(&mut self, depth: usize, nest: u32) {
        let n = self.rng.gen_range(1..4);
        for _ in 0..n {
            self.statement(depth, nest);
        }
    }

    fn statement(&mut self, depth: usize, nest: u32) {
        let choice = if nest >= 3 { 0 } else { self.rng.gen_range(0..14) };
        match choice {
            0..=4 => {
                let s = self.simple();
                self.push(depth, s);
            }
            5 | 6 => self.if_statement(depth, nest),
            7 => {
                let c = self.cond();
                let s = self.simple();
                self.push(depth, format!("if {c}: {s}"));
            }
            8 => {
                self.loop_counter += 1;
                let i = format!("i{}", self.loop_counter);
                let n = self.rng.gen_range(0..5);
                self.push(depth, format!("for {i} in range({n}) {{"));
                self.body(depth + 1, nest + 1);
                self.close_with_else(depth, nest);
            }
            9 => {
                self.loop_counter += 1;
                let w = format!("w{}", self.loop_counter);
                let n = self.rng.gen_range(0..4);
                self.push(depth, format!("{w} = 0"));
                self.push(depth, format!("while {w} < {n} {{"));
                self.push(depth + 1, format!("{w} = {w} + 1"));
                self.body(depth + 1, nest + 1);
                self.close_with_else(depth, nest);
            }
            10 | 11 => {
                let v = self.var();
                self.push(depth, format!("match {v} % 4 {{"));
                let mut used = Vec::new();
                for _ in 0..self.rng.gen_range(1..4) {
                    let k = self.rng.gen_range(-1..4);
                    if used.contains(&k) {
                        continue;
                    }
                    used.push(k);
                    self.push(depth + 1, format!("case {k} {{"));
                    self.body(depth + 2, nest + 1);
                    self.push(depth + 1, "}".into());
                }
                if self.rng.gen_bool(0.4) {
                    self.push(depth + 1, "case _ {".into());
                    self.body(depth + 2, nest + 1);
                    self.push(depth + 1, "}".into());
                }
                self.push(depth, "}".into());
            }
            12 => {
                self.push(depth, "try {".into());
                self.body(depth + 1, nest + 1);
                if self.rng.gen_bool(0.3) {
                    let v = self.var();
                    self.push(depth + 1, format!("{v} = 10 // ({v} % 2)"));
                }
                self.push(depth, "} except {".into());
                self.body(depth + 1, nest + 1);
                self.push(depth, "}".into());
            }
            _ => {
                let a = self.simple();
                self.push(depth, a);
                if self.rng.gen_bool(0.3) {
                    self.out.push(String::new());
                    self.push(depth, "# note".into());
                }
            }
        }
    }

    fn close_with_else(&mut self, depth: usize, nest: u32) {
        if self.rng.gen_bool(0.25) {
            self.push(depth, "} else {".into());
            self.body(depth + 1, nest + 1);
        }
        self.push(depth, "}".into());
    }

    fn if_statement(&mut self, depth: usize, nest: u32) {
        let c = self.cond();
        self.push(depth, format!("if {c} {{"));
        self.body(depth + 1, nest + 1);
        let mut tail = self.rng.gen_range(0..4);
        while tail == 1 {
            let c = self.cond();
            self.push(depth, format!("}} elif {c} {{"));
            self.body(depth + 1, nest + 1);
            tail = self.rng.gen_range(0..4);
        }
        if tail == 2 {
            self.push(depth, "} else {".into());
            self.body(depth + 1, nest + 1);
        }
        self.push(depth, "}".into());
    }

    fn function(&mut self, i: usize) {
        let name = format!("f{i}");
        let arity = self.rng.gen_range(0..3);
        let params: Vec<&str> = ["p", "q"][..arity].to_vec();
        self.push(0, format!("def {name}({}) {{", params.join(", ")));
        self.in_function = true;
        self.body(1, 1);
        if self.rng.gen_bool(0.6) {
            let e = self.expr(1);
            self.push(1, format!("return {e}"));
        }
        self.in_function = false;
        self.push(0, "}".into());
        self.functions.push((name, arity));
    }
}
