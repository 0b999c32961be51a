//! Recursive descent parser for Mini.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;

/// Deepest allowed nesting of blocks and parenthesised expressions.
pub const MAX_NESTING: usize = 64;

pub type ParseResult<T> = Result<T, ParseError>;

/// Parses a whole source file into a module.
pub fn parse(source: &str, file: &str) -> ParseResult<Module> {
    let tokens = tokenize(source)?;
    let mut parser = Parser { tokens, pos: 0, depth: 0, defs: 0 };
    let body = parser.statements(true)?;
    Ok(Module { file: file.to_string(), body })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
    /// Number of enclosing `def`s.
    defs: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn current(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> ParseResult<T> {
        let t = self.current();
        Err(ParseError { line: t.line, col: t.col, message: message.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> ParseResult<Token> {
        if *self.peek() == tok {
            Ok(self.advance())
        } else {
            self.error(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn enter(&mut self) -> ParseResult<()> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return self.error(format!("nesting deeper than {MAX_NESTING} levels"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Semi) {
            self.advance();
        }
    }

    /// If the next non-newline token is `tok`, consumes through it.
    fn accept_after_newlines(&mut self, tok: &Tok) -> bool {
        let mut n = 0;
        while *self.peek_at(n) == Tok::Newline {
            n += 1;
        }
        if self.peek_at(n) == tok {
            for _ in 0..=n {
                self.advance();
            }
            true
        } else {
            false
        }
    }

    fn statements(&mut self, top_level: bool) -> ParseResult<Block> {
        let mut body = Vec::new();
        loop {
            self.skip_separators();
            match self.peek() {
                Tok::Eof if top_level => break,
                Tok::RBrace if !top_level => break,
                Tok::Eof => return self.error("expected '}' before end of file"),
                Tok::RBrace => return self.error("unmatched '}'"),
                _ => {}
            }
            let stmt = self.statement()?;
            let compound = matches!(
                stmt.kind,
                StmtKind::If { inline: false, .. }
                    | StmtKind::While { .. }
                    | StmtKind::ForRange { .. }
                    | StmtKind::Match { .. }
                    | StmtKind::Def { .. }
                    | StmtKind::Try { .. }
            );
            body.push(stmt);
            if !compound && !matches!(self.peek(), Tok::Newline | Tok::Semi | Tok::RBrace | Tok::Eof) {
                return self.error(format!("expected end of statement, found {}", describe(self.peek())));
            }
        }
        Ok(body)
    }

    fn block(&mut self) -> ParseResult<Block> {
        self.enter()?;
        self.expect(Tok::LBrace, "'{'")?;
        let body = self.statements(false)?;
        if body.is_empty() {
            return self.error("empty block (use `pass`)");
        }
        self.expect(Tok::RBrace, "'}'")?;
        self.leave();
        Ok(body)
    }

    fn name(&mut self) -> ParseResult<String> {
        match self.peek().clone() {
            Tok::Ident(n) => {
                if n == BRANCH_NAME {
                    return self.error(format!("`{BRANCH_NAME}` is reserved"));
                }
                self.advance();
                Ok(n)
            }
            other => self.error(format!("expected a name, found {}", describe(&other))),
        }
    }

    fn statement(&mut self) -> ParseResult<Stmt> {
        let start = self.current().clone();
        let (line, col) = (start.line, start.col);
        let kind = match start.tok {
            Tok::If => {
                self.advance();
                return self.if_statement(line, col);
            }
            Tok::While => {
                self.advance();
                let test = self.expr()?;
                let body = self.block()?;
                let orelse = self.else_block()?;
                StmtKind::While { test, body, orelse }
            }
            Tok::For => {
                self.advance();
                let var = self.name()?;
                self.expect(Tok::In, "'in'")?;
                match self.peek() {
                    Tok::Ident(n) if n == "range" => {
                        self.advance();
                    }
                    other => return self.error(format!("expected 'range', found {}", describe(other))),
                }
                self.expect(Tok::LParen, "'('")?;
                let count = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                let body = self.block()?;
                let orelse = self.else_block()?;
                StmtKind::ForRange { var, count, body, orelse }
            }
            Tok::Match => {
                self.advance();
                self.match_statement()?
            }
            Tok::Def => {
                self.advance();
                let name = self.name()?;
                self.expect(Tok::LParen, "'('")?;
                let mut params = Vec::new();
                while *self.peek() != Tok::RParen {
                    let p = self.name()?;
                    if params.contains(&p) {
                        return self.error(format!("duplicate parameter `{p}`"));
                    }
                    params.push(p);
                    if *self.peek() == Tok::Comma {
                        self.advance();
                    } else {
                        break;
                    }
                }
                self.expect(Tok::RParen, "')'")?;
                self.defs += 1;
                let body = self.block();
                self.defs -= 1;
                StmtKind::Def { name, params, body: body? }
            }
            Tok::Return => {
                if self.defs == 0 {
                    return self.error("`return` outside a function");
                }
                self.advance();
                if matches!(self.peek(), Tok::Newline | Tok::Semi | Tok::RBrace | Tok::Eof) {
                    StmtKind::Return(None)
                } else {
                    StmtKind::Return(Some(self.expr()?))
                }
            }
            Tok::Try => {
                self.advance();
                let body = self.block()?;
                if !self.accept_after_newlines(&Tok::Except) {
                    return self.error("expected 'except' after try block");
                }
                let handler_line = self.tokens[self.pos - 1].line;
                let handler_body = self.block()?;
                StmtKind::Try { body, handler: Handler { line: handler_line, body: handler_body } }
            }
            Tok::Raise => {
                self.advance();
                StmtKind::Raise
            }
            Tok::Pass => {
                self.advance();
                StmtKind::Pass
            }
            Tok::Ident(_) if *self.peek_at(1) == Tok::Assign => {
                let target = self.name()?;
                self.advance();
                let value = self.expr()?;
                StmtKind::Assign { target, value }
            }
            _ => StmtKind::Expr(self.expr()?),
        };
        Ok(Stmt::new(kind, line, col))
    }

    fn else_block(&mut self) -> ParseResult<Block> {
        if self.accept_after_newlines(&Tok::Else) {
            self.block()
        } else {
            Ok(Vec::new())
        }
    }

    /// Parses after `if`/`elif`. `elif` chains become nested `If` statements
    /// in the else arm, each on its own line.
    fn if_statement(&mut self, line: u32, col: u32) -> ParseResult<Stmt> {
        let test = self.expr()?;
        if *self.peek() == Tok::Colon {
            self.advance();
            if matches!(self.peek(), Tok::Newline | Tok::Eof | Tok::LBrace) {
                return self.error("single-line `if` needs a statement after ':'");
            }
            let inner = self.statement()?;
            if !matches!(
                inner.kind,
                StmtKind::Assign { .. }
                    | StmtKind::Expr(_)
                    | StmtKind::Return(_)
                    | StmtKind::Raise
                    | StmtKind::Pass
                    | StmtKind::If { inline: true, .. }
            ) {
                return Err(ParseError {
                    line: inner.line,
                    col: inner.col,
                    message: "single-line `if` takes a simple statement".into(),
                });
            }
            let kind = StmtKind::If { test, body: vec![inner], orelse: Vec::new(), inline: true };
            return Ok(Stmt::new(kind, line, col));
        }
        let body = self.block()?;
        let mut n = 0;
        while *self.peek_at(n) == Tok::Newline {
            n += 1;
        }
        let orelse = if *self.peek_at(n) == Tok::Elif {
            for _ in 0..=n {
                self.advance();
            }
            let elif = self.tokens[self.pos - 1].clone();
            self.enter()?;
            let nested = self.if_statement(elif.line, elif.col)?;
            self.leave();
            vec![nested]
        } else {
            self.else_block()?
        };
        Ok(Stmt::new(StmtKind::If { test, body, orelse, inline: false }, line, col))
    }

    fn match_statement(&mut self) -> ParseResult<StmtKind> {
        let subject = self.expr()?;
        self.enter()?;
        self.expect(Tok::LBrace, "'{'")?;
        let mut cases: Vec<Case> = Vec::new();
        loop {
            while *self.peek() == Tok::Newline {
                self.advance();
            }
            if *self.peek() == Tok::RBrace {
                break;
            }
            let case_tok = self.expect(Tok::Case, "'case'")?;
            if cases.iter().any(|c| c.pattern == Pattern::Wildcard) {
                return Err(ParseError {
                    line: case_tok.line,
                    col: case_tok.col,
                    message: "case after wildcard is unreachable".into(),
                });
            }
            let pattern = self.pattern()?;
            let body = self.block()?;
            cases.push(Case { pattern, body, line: case_tok.line, synthetic: false });
        }
        if cases.is_empty() {
            return self.error("match needs at least one case");
        }
        self.expect(Tok::RBrace, "'}'")?;
        self.leave();
        Ok(StmtKind::Match { subject, cases })
    }

    fn pattern(&mut self) -> ParseResult<Pattern> {
        let negative = if *self.peek() == Tok::Minus {
            self.advance();
            true
        } else {
            false
        };
        let lit = match self.peek().clone() {
            Tok::Ident(n) if n == "_" && !negative => {
                self.advance();
                return Ok(Pattern::Wildcard);
            }
            Tok::Int(i) => Literal::Int(if negative { -i } else { i }),
            Tok::Float(x) => Literal::Float(if negative { -x } else { x }),
            Tok::Str(s) if !negative => Literal::Str(s),
            Tok::True if !negative => Literal::Bool(true),
            Tok::False if !negative => Literal::Bool(false),
            other => return self.error(format!("expected a literal pattern, found {}", describe(&other))),
        };
        self.advance();
        Ok(Pattern::Literal(lit))
    }

    // ---- expressions ----

    fn expr(&mut self) -> ParseResult<Expr> {
        self.enter()?;
        let e = self.or_expr();
        self.leave();
        e
    }

    fn or_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            self.advance();
            let rhs = self.and_expr()?;
            lhs = binary(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.not_expr()?;
        while *self.peek() == Tok::And {
            self.advance();
            let rhs = self.not_expr()?;
            lhs = binary(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> ParseResult<Expr> {
        if *self.peek() == Tok::Not {
            let t = self.advance();
            self.enter()?;
            let inner = self.not_expr()?;
            self.leave();
            return Ok(Expr { kind: ExprKind::Unary(UnaryOp::Not, Box::new(inner)), line: t.line });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> ParseResult<Expr> {
        let lhs = self.sum()?;
        let Some(op) = cmp_op(self.peek()) else { return Ok(lhs) };
        self.advance();
        let rhs = self.sum()?;
        if cmp_op(self.peek()).is_some() {
            return self.error("chained comparisons are not supported");
        }
        let line = lhs.line;
        Ok(Expr { kind: ExprKind::Compare(op, Box::new(lhs), Box::new(rhs)), line })
    }

    fn sum(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.term()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> ParseResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                Tok::SlashSlash => BinOp::FloorDiv,
                Tok::Percent => BinOp::Mod,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> ParseResult<Expr> {
        if *self.peek() == Tok::Minus {
            let t = self.advance();
            self.enter()?;
            let inner = self.unary()?;
            self.leave();
            return Ok(Expr { kind: ExprKind::Unary(UnaryOp::Neg, Box::new(inner)), line: t.line });
        }
        self.call()
    }

    fn call(&mut self) -> ParseResult<Expr> {
        let mut e = self.primary()?;
        while *self.peek() == Tok::LParen {
            self.advance();
            let args = self.arguments()?;
            let line = e.line;
            e = Expr { kind: ExprKind::Call(Box::new(e), args), line };
        }
        Ok(e)
    }

    fn arguments(&mut self) -> ParseResult<Vec<Expr>> {
        let mut args = Vec::new();
        while *self.peek() != Tok::RParen {
            args.push(self.expr()?);
            if *self.peek() == Tok::Comma {
                self.advance();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(args)
    }

    fn primary(&mut self) -> ParseResult<Expr> {
        let t = self.current().clone();
        let line = t.line;
        let kind = match t.tok {
            Tok::Int(i) => ExprKind::Lit(Literal::Int(i)),
            Tok::Float(x) => ExprKind::Lit(Literal::Float(x)),
            Tok::Str(s) => ExprKind::Lit(Literal::Str(s)),
            Tok::True => ExprKind::Lit(Literal::Bool(true)),
            Tok::False => ExprKind::Lit(Literal::Bool(false)),
            Tok::Ident(_) => ExprKind::Name(self.name()?),
            Tok::Print => {
                self.advance();
                self.expect(Tok::LParen, "'('")?;
                let args = self.arguments()?;
                return Ok(Expr { kind: ExprKind::Print(args), line });
            }
            Tok::LParen => {
                self.advance();
                if *self.peek() == Tok::RParen {
                    self.advance();
                    return Ok(Expr { kind: ExprKind::Tuple(Vec::new()), line });
                }
                let first = self.expr()?;
                if *self.peek() == Tok::RParen {
                    self.advance();
                    return Ok(first);
                }
                let mut items = vec![first];
                while *self.peek() == Tok::Comma {
                    self.advance();
                    if *self.peek() == Tok::RParen {
                        break;
                    }
                    items.push(self.expr()?);
                }
                self.expect(Tok::RParen, "')'")?;
                return Ok(Expr { kind: ExprKind::Tuple(items), line });
            }
            other => return self.error(format!("expected an expression, found {}", describe(&other))),
        };
        if !matches!(kind, ExprKind::Name(_)) {
            self.advance();
        }
        Ok(Expr { kind, line })
    }
}

fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    let line = lhs.line;
    Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), line }
}

fn cmp_op(tok: &Tok) -> Option<CmpOp> {
    Some(match tok {
        Tok::EqEq => CmpOp::Eq,
        Tok::NotEq => CmpOp::Ne,
        Tok::Lt => CmpOp::Lt,
        Tok::Le => CmpOp::Le,
        Tok::Gt => CmpOp::Gt,
        Tok::Ge => CmpOp::Ge,
        _ => return None,
    })
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Newline => "end of line".into(),
        Tok::Eof => "end of file".into(),
        Tok::Ident(n) => format!("`{n}`"),
        Tok::Int(i) => format!("`{i}`"),
        Tok::Float(x) => format!("`{x}`"),
        Tok::Str(_) => "string literal".into(),
        other => format!("{other:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(src: &str) -> Module {
        parse(src, "t.mini").unwrap()
    }

    #[test]
    fn single_assignment() {
        let m = p("x = 1");
        assert_eq!(m.body.len(), 1);
        assert!(matches!(m.body[0].kind, StmtKind::Assign { .. }));
        assert_eq!(m.body[0].line, 1);
    }

    #[test]
    fn if_without_else_has_empty_arm() {
        let m = p("if x == 0 {\n  x = 1\n}\ny = 2 * x\n");
        let StmtKind::If { body, orelse, .. } = &m.body[0].kind else { panic!() };
        assert_eq!(m.body[0].line, 1);
        assert_eq!(body[0].line, 2);
        assert!(orelse.is_empty());
        assert_eq!(m.body[1].line, 4);
    }

    #[test]
    fn single_line_if_shares_line() {
        let m = p("if x > 0: print(1)");
        let StmtKind::If { body, inline, .. } = &m.body[0].kind else { panic!() };
        assert!(*inline);
        assert_eq!(body[0].line, 1);
    }

    #[test]
    fn elif_becomes_nested_if_on_its_own_line() {
        let m = p("if a {\n b = 1\n} elif c {\n b = 2\n} else {\n b = 3\n}");
        let StmtKind::If { orelse, .. } = &m.body[0].kind else { panic!() };
        assert_eq!(orelse.len(), 1);
        assert_eq!(orelse[0].line, 3);
        let StmtKind::If { orelse: inner_else, .. } = &orelse[0].kind else { panic!() };
        assert_eq!(inner_else[0].line, 6);
    }

    #[test]
    fn else_may_follow_a_newline() {
        let m = p("if a {\n b = 1\n}\nelse {\n b = 2\n}");
        let StmtKind::If { orelse, .. } = &m.body[0].kind else { panic!() };
        assert_eq!(orelse[0].line, 5);
    }

    #[test]
    fn multiple_statements_per_line() {
        let m = p("a = 1; b = 2\nif a { c = 3 } d = 4");
        let lines: Vec<u32> = m.body.iter().map(|s| s.line).collect();
        assert_eq!(lines, vec![1, 1, 2, 2]);
    }

    #[test]
    fn reserved_branch_name_is_rejected() {
        assert!(parse("_branch = 1", "t").is_err());
        assert!(parse("x = _branch", "t").is_err());
        assert!(parse("def f(_branch) { pass }", "t").is_err());
    }

    #[test]
    fn nesting_limit() {
        let deep = |n: usize| {
            let mut s = String::new();
            for _ in 0..n {
                s.push_str("if x {\n");
            }
            s.push_str("pass\n");
            for _ in 0..n {
                s.push_str("}\n");
            }
            s
        };
        assert!(parse(&deep(20), "t").is_ok());
        let err = parse(&deep(80), "t").unwrap_err();
        assert!(err.message.contains("nesting"), "{err}");
        let parens = format!("x = {}1{}", "(".repeat(100), ")".repeat(100));
        assert!(parse(&parens, "t").is_err());
    }

    #[test]
    fn syntax_errors_report_position() {
        let e = parse("x = \ny = 2", "t").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse("if x {\n  y = = 2\n}", "t").unwrap_err();
        assert_eq!((e.line, e.col), (2, 7));
    }

    #[test]
    fn return_only_inside_functions() {
        assert!(parse("return 1", "t").is_err());
        assert!(parse("def f() {\n  if x { return 1 }\n  return\n}", "t").is_ok());
    }

    #[test]
    fn chained_comparison_rejected() {
        assert!(parse("x = 1 < 2 < 3", "t").is_err());
    }

    #[test]
    fn match_cases_and_wildcard() {
        let m = p("match x {\n case 1 { a = 1 }\n case -2 { a = 2 }\n case _ { a = 3 }\n}");
        let StmtKind::Match { cases, .. } = &m.body[0].kind else { panic!() };
        assert_eq!(cases.len(), 3);
        assert_eq!(cases[1].pattern, Pattern::Literal(Literal::Int(-2)));
        assert_eq!(cases[2].pattern, Pattern::Wildcard);
        assert_eq!(cases[2].line, 4);
        assert!(parse("match x { case _ { a = 1 } case 1 { a = 2 } }", "t").is_err());
    }

    #[test]
    fn tuples_and_calls() {
        let m = p("t = (1, f(2, 3), (4,))");
        let StmtKind::Assign { value, .. } = &m.body[0].kind else { panic!() };
        let ExprKind::Tuple(items) = &value.kind else { panic!() };
        assert_eq!(items.len(), 3);
    }

    #[test]
    fn empty_block_is_rejected() {
        assert!(parse("while x { }", "t").is_err());
    }

    #[test]
    fn parsing_is_deterministic() {
        let src = "def f(a, b) {\n return a + b\n}\nfor i in range(3) { print(f(i, 1)) } else { pass }";
        assert_eq!(p(src), p(src));
    }
}
