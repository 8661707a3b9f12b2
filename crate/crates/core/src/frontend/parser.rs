use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::{Diagnostic, Span};
use crate::types::ElemType;

/// Methods whose name may be followed by a template argument list.
const TEMPLATE_METHODS: &[&str] = &["select", "replicate", "format"];
/// Free functions whose name may be followed by a template argument list.
const TEMPLATE_FUNCS: &[&str] = &["write_atomic"];
/// Template arguments bind tighter than comparisons so `>` closes the list.
const TARG_PREC: u8 = 7;

pub fn parse(src: &str) -> Result<Program, Diagnostic> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut kernels = Vec::new();
    while p.peek() != &Tok::Eof {
        kernels.push(p.kernel()?);
    }
    if kernels.is_empty() {
        return Err(Diagnostic::new(p.span(), "expected at least one kernel"));
    }
    Ok(Program { kernels })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

fn scalar_type(name: &str) -> Option<ElemType> {
    ElemType::from_c_name(name)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_ident(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(q) if q == s)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn unexpected<T>(&self, what: &str) -> Result<T, Diagnostic> {
        Err(Diagnostic::new(self.span(), format!("expected {what}, found {}", self.peek())))
    }

    fn expect_punct(&mut self, p: &str) -> Result<Span, Diagnostic> {
        if self.is_punct(p) {
            Ok(self.bump().span)
        } else {
            self.unexpected(&format!("`{p}`"))
        }
    }

    fn ident(&mut self) -> Result<(String, Span), Diagnostic> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let span = self.bump().span;
                Ok((s, span))
            }
            _ => self.unexpected("identifier"),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<Span, Diagnostic> {
        if self.is_ident(kw) {
            Ok(self.bump().span)
        } else {
            self.unexpected(&format!("`{kw}`"))
        }
    }

    fn kernel(&mut self) -> Result<Kernel, Diagnostic> {
        let span = self.keyword("kernel")?;
        let (name, _) = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let (ty, tspan) = self.ident()?;
                let (pname, _) = self.ident()?;
                if ty == "SurfaceIndex" {
                    params.push(ParamDecl::Surface { name: pname, span: tspan });
                } else if let Some(t) = scalar_type(&ty) {
                    params.push(ParamDecl::Scalar { ty: t, name: pname, span: tspan });
                } else {
                    return Err(Diagnostic::new(tspan, format!("unknown parameter type `{ty}`")));
                }
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        let body = self.block()?;
        Ok(Kernel { name, params, body, span })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, Diagnostic> {
        self.expect_punct("{")?;
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if self.peek() == &Tok::Eof {
                return self.unexpected("`}`");
            }
            self.stmt(&mut out)?;
        }
        self.bump();
        Ok(out)
    }

    /// A braced block, or a single statement.
    fn body(&mut self) -> Result<Vec<Stmt>, Diagnostic> {
        if self.is_punct("{") {
            self.block()
        } else {
            let mut out = Vec::new();
            self.stmt(&mut out)?;
            Ok(out)
        }
    }

    fn starts_decl(&self) -> bool {
        match self.peek() {
            Tok::Ident(s) => {
                scalar_type(s).is_some() || matches!(s.as_str(), "vector" | "matrix" | "vector_ref" | "matrix_ref")
            }
            _ => false,
        }
    }

    fn type_spec(&mut self) -> Result<TypeSpec, Diagnostic> {
        let (name, span) = self.ident()?;
        if let Some(elem) = scalar_type(&name) {
            return Ok(TypeSpec { kind: ShapeKind::Scalar, elem, dims: vec![] });
        }
        let kind = match name.as_str() {
            "vector" => ShapeKind::Vector,
            "matrix" => ShapeKind::Matrix,
            "vector_ref" => ShapeKind::VectorRef,
            "matrix_ref" => ShapeKind::MatrixRef,
            _ => return Err(Diagnostic::new(span, format!("unknown type `{name}`"))),
        };
        let targs = self.targs()?;
        let n = kind.dims() + 1;
        if targs.len() != n {
            return Err(Diagnostic::new(
                span,
                format!("`{name}` takes {n} template arguments, found {}", targs.len()),
            ));
        }
        let mut it = targs.into_iter();
        let elem = match it.next() {
            Some(TArg::Type(t)) => t,
            _ => return Err(Diagnostic::new(span, format!("first template argument of `{name}` must be a type"))),
        };
        let mut dims = Vec::new();
        for a in it {
            match a {
                TArg::Expr(e) => dims.push(e),
                TArg::Type(_) => return Err(Diagnostic::new(span, "dimension must be an integer constant")),
            }
        }
        Ok(TypeSpec { kind, elem, dims })
    }

    fn targs(&mut self) -> Result<Vec<TArg>, Diagnostic> {
        self.expect_punct("<")?;
        let mut out = Vec::new();
        if self.eat_punct(">") {
            return Ok(out);
        }
        loop {
            let is_type = matches!(self.peek(), Tok::Ident(s) if scalar_type(s).is_some());
            if is_type {
                let (s, _) = self.ident()?;
                out.push(TArg::Type(scalar_type(&s).unwrap()));
            } else {
                out.push(TArg::Expr(self.expr_prec(TARG_PREC)?));
            }
            if self.eat_punct(">") {
                return Ok(out);
            }
            if !self.eat_punct(",") {
                return self.unexpected("`,` or `>` in template argument list");
            }
        }
    }

    fn stmt(&mut self, out: &mut Vec<Stmt>) -> Result<(), Diagnostic> {
        let span = self.span();
        if self.is_punct("{") {
            let body = self.block()?;
            out.push(Stmt::Block { body, span });
            return Ok(());
        }
        if self.eat_punct(";") {
            return Ok(());
        }
        if self.is_ident("if") {
            self.bump();
            self.expect_punct("(")?;
            let cond = self.expr()?;
            self.expect_punct(")")?;
            let then = self.body()?;
            let els = if self.is_ident("else") {
                self.bump();
                Some(self.body()?)
            } else {
                None
            };
            out.push(Stmt::If { cond, then, els, span });
            return Ok(());
        }
        if self.is_ident("simd_if") {
            self.bump();
            self.expect_punct("(")?;
            let cond = self.expr()?;
            self.expect_punct(")")?;
            let then = self.block()?;
            let els = if self.is_ident("simd_else") {
                self.bump();
                Some(self.block()?)
            } else {
                None
            };
            out.push(Stmt::SimdIf { cond, then, els, span });
            return Ok(());
        }
        if self.is_ident("for") {
            out.push(self.for_loop()?);
            return Ok(());
        }
        if self.starts_decl() && matches!(self.peek_at(1), Tok::Ident(_) | Tok::Punct("<")) {
            let ty = self.type_spec()?;
            loop {
                let (name, nspan) = self.ident()?;
                let init = if self.eat_punct("=") {
                    if self.is_punct("{") {
                        self.bump();
                        let mut items = Vec::new();
                        if !self.is_punct("}") {
                            loop {
                                items.push(self.expr()?);
                                if !self.eat_punct(",") {
                                    break;
                                }
                            }
                        }
                        self.expect_punct("}")?;
                        Init::List(items)
                    } else {
                        Init::Assign(self.expr()?)
                    }
                } else if self.eat_punct("(") {
                    let e = self.expr()?;
                    self.expect_punct(")")?;
                    Init::Ctor(e)
                } else {
                    Init::None
                };
                out.push(Stmt::Decl { ty: ty.clone(), name, init, span: nspan });
                if !self.eat_punct(",") {
                    break;
                }
            }
            self.expect_punct(";")?;
            return Ok(());
        }
        let target = self.expr()?;
        let op = match self.peek() {
            Tok::Punct("=") => {
                self.bump();
                Some(None)
            }
            Tok::Punct(p) => match BinaryOp::from_compound(p) {
                Some(op) => {
                    self.bump();
                    Some(Some(op))
                }
                None => None,
            },
            _ => None,
        };
        match op {
            Some(op) => {
                let value = self.expr()?;
                self.expect_punct(";")?;
                out.push(Stmt::Assign { target, op, value, span });
            }
            None => {
                self.expect_punct(";")?;
                out.push(Stmt::Expr { expr: target, span });
            }
        }
        Ok(())
    }

    fn for_loop(&mut self) -> Result<Stmt, Diagnostic> {
        let span = self.keyword("for")?;
        self.expect_punct("(")?;
        let (tname, tspan) = self.ident()?;
        let Some(var_ty) = scalar_type(&tname).filter(|t| t.is_int()) else {
            return Err(Diagnostic::new(tspan, "for-loop variable must be declared with an integer type"));
        };
        let (var, _) = self.ident()?;
        self.expect_punct("=")?;
        let init = self.expr()?;
        self.expect_punct(";")?;
        let cond = self.expr()?;
        self.expect_punct(";")?;
        let step = if self.eat_punct("++") {
            self.expect_var(&var)?;
            Step::PreInc
        } else if self.eat_punct("--") {
            self.expect_var(&var)?;
            Step::PreDec
        } else {
            self.expect_var(&var)?;
            match self.peek().clone() {
                Tok::Punct("++") => {
                    self.bump();
                    Step::Inc
                }
                Tok::Punct("--") => {
                    self.bump();
                    Step::Dec
                }
                Tok::Punct(p) => match BinaryOp::from_compound(p) {
                    Some(op) => {
                        self.bump();
                        Step::Compound(op, self.expr()?)
                    }
                    None => return self.unexpected("loop step"),
                },
                _ => return self.unexpected("loop step"),
            }
        };
        self.expect_punct(")")?;
        let body = self.body()?;
        Ok(Stmt::For { var_ty, var, init, cond, step, body, span })
    }

    fn expect_var(&mut self, var: &str) -> Result<(), Diagnostic> {
        let (name, span) = self.ident()?;
        if name != var {
            return Err(Diagnostic::new(span, format!("loop step must update `{var}`")));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, Diagnostic> {
        self.expr_prec(0)
    }

    fn expr_prec(&mut self, min: u8) -> Result<Expr, Diagnostic> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct(p) => BinaryOp::from_symbol(p),
                _ => None,
            };
            let Some(op) = op.filter(|op| op.precedence() > min) else {
                break;
            };
            let span = self.bump().span;
            let rhs = self.expr_prec(op.precedence())?;
            lhs = Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs), span };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, Diagnostic> {
        let span = self.span();
        let op = match self.peek() {
            Tok::Punct("-") => Some(UnaryOp::Neg),
            Tok::Punct("!") => Some(UnaryOp::Not),
            Tok::Punct("~") => Some(UnaryOp::BitNot),
            _ => None,
        };
        if let Some(op) = op {
            self.bump();
            let expr = self.unary()?;
            return Ok(Expr::Unary { op, expr: Box::new(expr), span });
        }
        if self.is_punct("(") {
            if let Tok::Ident(s) = self.peek_at(1) {
                if let Some(ty) = scalar_type(s) {
                    if self.peek_at(2) == &Tok::Punct(")") {
                        self.bump();
                        self.bump();
                        self.bump();
                        let expr = self.unary()?;
                        return Ok(Expr::Cast { ty, expr: Box::new(expr), span });
                    }
                }
            }
        }
        self.postfix()
    }

    fn args(&mut self) -> Result<Vec<Expr>, Diagnostic> {
        self.expect_punct("(")?;
        let mut out = Vec::new();
        if self.eat_punct(")") {
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if self.eat_punct(")") {
                return Ok(out);
            }
            if !self.eat_punct(",") {
                return self.unexpected("`,` or `)`");
            }
        }
    }

    fn postfix(&mut self) -> Result<Expr, Diagnostic> {
        let mut e = self.primary()?;
        loop {
            let span = self.span();
            if self.eat_punct(".") {
                let (name, _) = self.ident()?;
                let targs =
                    if TEMPLATE_METHODS.contains(&name.as_str()) && self.is_punct("<") { self.targs()? } else { vec![] };
                let args = self.args()?;
                e = Expr::Method { recv: Box::new(e), name, targs, args, span };
            } else if self.eat_punct("[") {
                let index = self.expr()?;
                self.expect_punct("]")?;
                e = Expr::Index { base: Box::new(e), index: Box::new(index), span };
            } else if self.is_punct("(") {
                let args = self.args()?;
                e = Expr::Apply { base: Box::new(e), args, span };
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, Diagnostic> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int { value, unsigned } => {
                self.bump();
                Ok(Expr::Int { value, unsigned, span })
            }
            Tok::Float { value, single } => {
                self.bump();
                Ok(Expr::Float { value, single, span })
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                let targs =
                    if TEMPLATE_FUNCS.contains(&name.as_str()) && self.is_punct("<") { self.targs()? } else { vec![] };
                if self.is_punct("(") {
                    let args = self.args()?;
                    Ok(Expr::Call { name, targs, args, span })
                } else if !targs.is_empty() {
                    self.unexpected("`(`")
                } else {
                    Ok(Expr::Var { name, span })
                }
            }
            _ => self.unexpected("expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel_body(src: &str) -> Vec<Stmt> {
        parse(&format!("kernel k() {{ {src} }}")).unwrap().kernels.remove(0).body
    }

    fn sp() -> Span {
        Span::default()
    }

    #[test]
    fn vector_declaration() {
        let body = kernel_body("vector<short,8> v;");
        assert_eq!(
            body,
            vec![Stmt::Decl {
                ty: TypeSpec { kind: ShapeKind::Vector, elem: ElemType::W, dims: vec![Expr::int(8, sp())] },
                name: "v".into(),
                init: Init::None,
                span: sp(),
            }]
        );
    }

    #[test]
    fn matrix_select_assignment() {
        let body = kernel_body("m = in.select<6,1,24,1>(1,3);");
        let Stmt::Assign { value: Expr::Method { name, targs, args, .. }, .. } = &body[0] else {
            panic!("{body:?}")
        };
        assert_eq!(name, "select");
        let targs: Vec<i64> = targs
            .iter()
            .map(|t| match t {
                TArg::Expr(Expr::Int { value, .. }) => *value,
                _ => panic!(),
            })
            .collect();
        assert_eq!(targs, vec![6, 1, 24, 1]);
        assert_eq!(args, &vec![Expr::int(1, sp()), Expr::int(3, sp())]);
    }

    #[test]
    fn vector_arity_error() {
        let err = parse("kernel k() { vector<int,8,3> v; }").unwrap_err();
        assert!(err.message.contains("takes 2 template arguments"), "{err}");
        assert_eq!((err.span.line, err.span.col), (1, 14));
    }

    #[test]
    fn precedence() {
        let body = kernel_body("x = a + b * c << 1 & d;");
        let Stmt::Assign { value, .. } = &body[0] else { panic!() };
        let Expr::Binary { op: BinaryOp::And, lhs, .. } = value else { panic!("{value:?}") };
        let Expr::Binary { op: BinaryOp::Shl, lhs, .. } = lhs.as_ref() else { panic!() };
        assert!(matches!(lhs.as_ref(), Expr::Binary { op: BinaryOp::Add, .. }));
    }

    #[test]
    fn template_arg_expressions() {
        let body = kernel_body("y = x.select<2*4, 1>(i + 1) > z;");
        let Stmt::Assign { value: Expr::Binary { op: BinaryOp::Gt, .. }, .. } = &body[0] else {
            panic!("{body:?}")
        };
    }

    #[test]
    fn statements() {
        let body = kernel_body(
            "for (int i = 0; i < 4; i++) { v(i) += 1; }
             simd_if (v > 0) { v = 1; } simd_else { v = 2; }
             if (1) x = 2; else { x = 3; }
             int a = 1, b(2);
             vector<int,4> c = {1, 2, 3, 4};
             write(out, 0, v);",
        );
        assert_eq!(body.len(), 7);
        assert!(matches!(body[0], Stmt::For { step: Step::Inc, .. }));
        assert!(matches!(body[1], Stmt::SimdIf { els: Some(_), .. }));
        assert!(matches!(&body[5], Stmt::Decl { init: Init::List(v), .. } if v.len() == 4));
        assert!(matches!(body[6], Stmt::Expr { .. }));
    }

    #[test]
    fn casts_and_atomic_templates() {
        let body = kernel_body("x = (float)y; r = write_atomic<ATOMIC_INC>(s, offs);");
        assert!(matches!(&body[0], Stmt::Assign { value: Expr::Cast { ty: ElemType::F, .. }, .. }));
        assert!(matches!(&body[1], Stmt::Assign { value: Expr::Call { targs, .. }, .. } if targs.len() == 1));
    }

    #[test]
    fn syntax_error_position() {
        let err = parse("kernel k() {\n  x = ;\n}").unwrap_err();
        assert_eq!((err.span.line, err.span.col), (2, 7));
    }
}
