//! Kernel DSL: parsing, loop unrolling, shape checking and lowering to IR.

pub mod ast;
mod consteval;
mod lexer;
mod lower;
mod parser;
pub mod typed;
mod typecheck;
mod unparse;
mod unroll;

use std::fmt;

pub use consteval::const_int;
pub use lexer::{lex, Tok, Token};
pub use lower::lower;
pub use parser::parse;
pub use typecheck::typecheck;
pub use unparse::unparse;
pub use unroll::unroll;

use crate::ir::Module;

/// Source position (1-based). Positions never affect AST equality, so a
/// reparsed unparse compares equal to the original.
#[derive(Clone, Copy, Debug, Default, Eq, Hash)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn new(span: Span, message: impl Into<String>) -> Diagnostic {
        Diagnostic { span, message: message.into() }
    }

    /// `file:line:col: error: message`
    pub fn render(&self, file: &str) -> String {
        format!("{}:{}:{}: error: {}", file, self.span.line, self.span.col, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: error: {}", self.span.line, self.span.col, self.message)
    }
}

impl std::error::Error for Diagnostic {}

/// Parses, unrolls, checks and lowers every kernel in `src`.
pub fn compile_source(src: &str) -> Result<Vec<Module>, Diagnostic> {
    let program = parse(src)?;
    program
        .kernels
        .iter()
        .map(|k| {
            let k = unroll(k)?;
            let t = typecheck(&k)?;
            Ok(lower(&t))
        })
        .collect()
}
