//! Tokenizer for Mini source text.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Int(i64),
    Float(f64),
    Str(String),
    Ident(String),
    // keywords
    If,
    Elif,
    Else,
    While,
    For,
    In,
    Match,
    Case,
    Def,
    Return,
    Try,
    Except,
    Raise,
    Pass,
    Print,
    True,
    False,
    And,
    Or,
    Not,
    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Semi,
    Assign,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    SlashSlash,
    Percent,
    Newline,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
}

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "if" => Tok::If,
        "elif" => Tok::Elif,
        "else" => Tok::Else,
        "while" => Tok::While,
        "for" => Tok::For,
        "in" => Tok::In,
        "match" => Tok::Match,
        "case" => Tok::Case,
        "def" => Tok::Def,
        "return" => Tok::Return,
        "try" => Tok::Try,
        "except" => Tok::Except,
        "raise" => Tok::Raise,
        "pass" => Tok::Pass,
        "print" => Tok::Print,
        "True" => Tok::True,
        "False" => Tok::False,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        _ => return None,
    })
}

/// Splits source text into tokens. Newlines inside parentheses are dropped so
/// expressions may continue across lines; elsewhere they end statements.
pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line: u32 = 1;
    let mut line_start = 0;
    let mut parens = 0usize;

    while i < chars.len() {
        let c = chars[i];
        let col = (i - line_start + 1) as u32;
        let err = |msg: String| ParseError { line, col, message: msg };
        match c {
            '\n' => {
                if parens == 0 {
                    toks.push(Token { tok: Tok::Newline, line, col });
                }
                i += 1;
                line += 1;
                line_start = i;
            }
            ' ' | '\t' | '\r' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let mut is_float = false;
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let tok = if is_float {
                    Tok::Float(text.parse().map_err(|_| err(format!("bad float literal {text}")))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| err(format!("integer literal {text} out of range")))?)
                };
                toks.push(Token { tok, line, col });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = keyword(&word).unwrap_or(Tok::Ident(word));
                toks.push(Token { tok, line, col });
            }
            '"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(err("unterminated string literal".into())),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = chars.get(i + 1).copied();
                            s.push(match esc {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('\\') => '\\',
                                Some('"') => '"',
                                _ => return Err(err("unknown escape sequence".into())),
                            });
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                toks.push(Token { tok: Tok::Str(s), line, col });
            }
            _ => {
                let next = chars.get(i + 1).copied();
                let (tok, width) = match (c, next) {
                    ('=', Some('=')) => (Tok::EqEq, 2),
                    ('!', Some('=')) => (Tok::NotEq, 2),
                    ('<', Some('=')) => (Tok::Le, 2),
                    ('>', Some('=')) => (Tok::Ge, 2),
                    ('/', Some('/')) => (Tok::SlashSlash, 2),
                    ('=', _) => (Tok::Assign, 1),
                    ('<', _) => (Tok::Lt, 1),
                    ('>', _) => (Tok::Gt, 1),
                    ('/', _) => (Tok::Slash, 1),
                    ('(', _) => (Tok::LParen, 1),
                    (')', _) => (Tok::RParen, 1),
                    ('{', _) => (Tok::LBrace, 1),
                    ('}', _) => (Tok::RBrace, 1),
                    (',', _) => (Tok::Comma, 1),
                    (':', _) => (Tok::Colon, 1),
                    (';', _) => (Tok::Semi, 1),
                    ('+', _) => (Tok::Plus, 1),
                    ('-', _) => (Tok::Minus, 1),
                    ('*', _) => (Tok::Star, 1),
                    ('%', _) => (Tok::Percent, 1),
                    _ => return Err(err(format!("unexpected character {c:?}"))),
                };
                match tok {
                    Tok::LParen => parens += 1,
                    Tok::RParen => parens = parens.saturating_sub(1),
                    _ => {}
                }
                toks.push(Token { tok, line, col });
                i += width;
            }
        }
    }
    let col = (chars.len() - line_start + 1) as u32;
    toks.push(Token { tok: Tok::Eof, line, col });
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn numbers_and_operators() {
        assert_eq!(
            kinds("x = 3 // 2.5e1"),
            vec![
                Tok::Ident("x".into()),
                Tok::Assign,
                Tok::Int(3),
                Tok::SlashSlash,
                Tok::Float(25.0),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn newlines_inside_parens_are_dropped() {
        let toks = kinds("f(1,\n2)\nx");
        assert_eq!(toks.iter().filter(|t| **t == Tok::Newline).count(), 1);
    }

    #[test]
    fn crlf_and_comments() {
        let toks = tokenize("a = 1 # c\r\nb = 2\r\n").unwrap();
        let b = toks.iter().find(|t| t.tok == Tok::Ident("b".into())).unwrap();
        assert_eq!((b.line, b.col), (2, 1));
    }

    #[test]
    fn string_escapes() {
        assert_eq!(kinds(r#""a\n\"b""#)[0], Tok::Str("a\n\"b".into()));
        assert!(tokenize("\"abc").is_err());
    }

    #[test]
    fn integer_overflow_is_an_error() {
        let e = tokenize("x = 99999999999999999999").unwrap_err();
        assert_eq!(e.line, 1);
    }
}
