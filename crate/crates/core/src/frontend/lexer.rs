use super::{Diagnostic, Span};

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Int { value: i64, unsigned: bool },
    Float { value: f64, single: bool },
    Punct(&'static str),
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int { value, .. } => write!(f, "`{value}`"),
            Tok::Float { value, .. } => write!(f, "`{value}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

// Longest first so that maximal munch works by linear scan.
const PUNCTS: &[&str] = &[
    "<<=", ">>=", "<<", ">>", "<=", ">=", "==", "!=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "++", "--",
    "&&", "||", "(", ")", "{", "}", "[", "]", "<", ">", ",", ";", ".", "=", "+", "-", "*", "/", "%", "&", "|",
    "^", "~", "!",
];

pub fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if bytes[*i] == b'\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < bytes.len() {
        let c = bytes[i];
        let span = Span { line, col };
        if c.is_ascii_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if src[i..].starts_with("//") {
            let n = src[i..].find('\n').unwrap_or(src.len() - i);
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        if src[i..].starts_with("/*") {
            let Some(n) = src[i + 2..].find("*/") else {
                return Err(Diagnostic::new(span, "unterminated comment"));
            };
            advance(&mut i, &mut line, &mut col, n + 4);
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let n = src[i..].find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_')).unwrap_or(src.len() - i);
            out.push(Token { tok: Tok::Ident(src[i..i + n].to_string()), span });
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let (tok, n) = number(&src[i..]).ok_or_else(|| Diagnostic::new(span, "malformed number"))?;
            out.push(Token { tok, span });
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        match PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                out.push(Token { tok: Tok::Punct(p), span });
                advance(&mut i, &mut line, &mut col, p.len());
            }
            None => {
                let ch = src[i..].chars().next().unwrap();
                return Err(Diagnostic::new(span, format!("unexpected character `{ch}`")));
            }
        }
    }
    out.push(Token { tok: Tok::Eof, span: Span { line, col } });
    Ok(out)
}

fn number(s: &str) -> Option<(Tok, usize)> {
    let b = s.as_bytes();
    let radix_prefix = |p: &str| s.len() > 2 && s[..2].eq_ignore_ascii_case(p);
    if radix_prefix("0x") || radix_prefix("0b") {
        let radix = if radix_prefix("0x") { 16 } else { 2 };
        let n = 2 + s[2..].find(|c: char| !c.is_digit(radix)).unwrap_or(s.len() - 2);
        let value = i64::from_str_radix(&s[2..n], radix).ok()?;
        let (unsigned, n) = int_suffix(s, n);
        return Some((Tok::Int { value, unsigned }, n));
    }
    let mut n = 0;
    while n < b.len() && b[n].is_ascii_digit() {
        n += 1;
    }
    let mut is_float = false;
    if n < b.len() && b[n] == b'.' {
        is_float = true;
        n += 1;
        while n < b.len() && b[n].is_ascii_digit() {
            n += 1;
        }
    }
    if n < b.len() && (b[n] == b'e' || b[n] == b'E') {
        let mut m = n + 1;
        if m < b.len() && (b[m] == b'+' || b[m] == b'-') {
            m += 1;
        }
        if m < b.len() && b[m].is_ascii_digit() {
            while m < b.len() && b[m].is_ascii_digit() {
                m += 1;
            }
            is_float = true;
            n = m;
        }
    }
    if is_float || (n < b.len() && (b[n] == b'f' || b[n] == b'F')) {
        let value: f64 = s[..n].parse().ok()?;
        let single = n < b.len() && (b[n] == b'f' || b[n] == b'F');
        let value = if single { value as f32 as f64 } else { value };
        return Some((Tok::Float { value, single }, n + single as usize));
    }
    let value: i64 = s[..n].parse().ok()?;
    let (unsigned, n) = int_suffix(s, n);
    Some((Tok::Int { value, unsigned }, n))
}

fn int_suffix(s: &str, n: usize) -> (bool, usize) {
    match s.as_bytes().get(n) {
        Some(b'u') | Some(b'U') => (true, n + 1),
        _ => (false, n),
    }
}
