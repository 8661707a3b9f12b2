use super::ast::*;
use super::consteval::const_int;
use super::Diagnostic;
use crate::types::{convert, Num};

/// Upper bound on the trip count of a single loop.
pub const MAX_TRIPS: usize = 4096;

/// Fully unrolls every `for` loop. The loop variable is substituted by an
/// integer literal in each copy of the body; each iteration becomes a block.
pub fn unroll(k: &Kernel) -> Result<Kernel, Diagnostic> {
    Ok(Kernel { body: stmts(&k.body)?, ..k.clone() })
}

fn stmts(body: &[Stmt]) -> Result<Vec<Stmt>, Diagnostic> {
    body.iter().map(stmt).collect()
}

fn stmt(s: &Stmt) -> Result<Stmt, Diagnostic> {
    Ok(match s {
        Stmt::If { cond, then, els, span } => Stmt::If {
            cond: cond.clone(),
            then: stmts(then)?,
            els: els.as_deref().map(stmts).transpose()?,
            span: *span,
        },
        Stmt::SimdIf { cond, then, els, span } => Stmt::SimdIf {
            cond: cond.clone(),
            then: stmts(then)?,
            els: els.as_deref().map(stmts).transpose()?,
            span: *span,
        },
        Stmt::Block { body, span } => Stmt::Block { body: stmts(body)?, span: *span },
        Stmt::For { var_ty, var, init, cond, step, body, span } => {
            check_not_assigned(body, var)?;
            let wrap = |v: i64| match convert(Num::Int(v), *var_ty) {
                Num::Int(i) => i,
                Num::Float(_) => unreachable!(),
            };
            let start = const_int(init)
                .ok_or_else(|| Diagnostic::new(init.span(), "loop start must be a compile-time constant"))?;
            let mut i = wrap(start);
            let mut iterations = Vec::new();
            loop {
                let c = subst_expr(cond, var, i);
                let go = const_int(&c).ok_or_else(|| {
                    Diagnostic::new(cond.span(), "loop condition must be a compile-time constant")
                })?;
                if go == 0 {
                    break;
                }
                if iterations.len() == MAX_TRIPS {
                    return Err(Diagnostic::new(*span, format!("loop exceeds {MAX_TRIPS} iterations")));
                }
                let copy: Vec<Stmt> = body.iter().map(|s| subst_stmt(s, var, i)).collect();
                iterations.push(Stmt::Block { body: stmts(&copy)?, span: *span });
                let next = match step {
                    Step::Inc | Step::PreInc => Some(i + 1),
                    Step::Dec | Step::PreDec => Some(i - 1),
                    Step::Compound(op, e) => {
                        let rhs = const_int(&subst_expr(e, var, i))
                            .ok_or_else(|| Diagnostic::new(e.span(), "loop step must be a compile-time constant"))?;
                        let lit = |v| Box::new(Expr::int(v, *span));
                        const_int(&Expr::Binary { op: *op, lhs: lit(i), rhs: lit(rhs), span: *span })
                    }
                };
                i = wrap(next.ok_or_else(|| Diagnostic::new(*span, "loop step overflows"))?);
            }
            Stmt::Block { body: iterations, span: *span }
        }
        other => other.clone(),
    })
}

fn check_not_assigned(body: &[Stmt], var: &str) -> Result<(), Diagnostic> {
    for s in body {
        match s {
            Stmt::Assign { target, span, .. } => {
                if matches!(target, Expr::Var { name, .. } if name == var) {
                    return Err(Diagnostic::new(*span, format!("loop variable `{var}` is assigned in the loop body")));
                }
            }
            Stmt::Decl { name, span, .. } if name == var => {
                return Err(Diagnostic::new(*span, format!("declaration shadows loop variable `{var}`")));
            }
            Stmt::If { then, els, .. } | Stmt::SimdIf { then, els, .. } => {
                check_not_assigned(then, var)?;
                if let Some(e) = els {
                    check_not_assigned(e, var)?;
                }
            }
            Stmt::Block { body, .. } => check_not_assigned(body, var)?,
            Stmt::For { var: inner, body, span, .. } => {
                if inner == var {
                    return Err(Diagnostic::new(*span, format!("nested loop reuses variable `{var}`")));
                }
                check_not_assigned(body, var)?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn subst_stmt(s: &Stmt, var: &str, v: i64) -> Stmt {
    let e = |x: &Expr| subst_expr(x, var, v);
    let body = |b: &[Stmt]| b.iter().map(|s| subst_stmt(s, var, v)).collect::<Vec<_>>();
    match s {
        Stmt::Decl { ty, name, init, span } => Stmt::Decl {
            ty: TypeSpec { kind: ty.kind, elem: ty.elem, dims: ty.dims.iter().map(e).collect() },
            name: name.clone(),
            init: match init {
                Init::None => Init::None,
                Init::Assign(x) => Init::Assign(e(x)),
                Init::Ctor(x) => Init::Ctor(e(x)),
                Init::List(xs) => Init::List(xs.iter().map(e).collect()),
            },
            span: *span,
        },
        Stmt::Assign { target, op, value, span } => {
            Stmt::Assign { target: e(target), op: *op, value: e(value), span: *span }
        }
        Stmt::Expr { expr, span } => Stmt::Expr { expr: e(expr), span: *span },
        Stmt::If { cond, then, els, span } => {
            Stmt::If { cond: e(cond), then: body(then), els: els.as_deref().map(body), span: *span }
        }
        Stmt::SimdIf { cond, then, els, span } => {
            Stmt::SimdIf { cond: e(cond), then: body(then), els: els.as_deref().map(body), span: *span }
        }
        Stmt::For { var_ty, var: inner, init, cond, step, body: b, span } => Stmt::For {
            var_ty: *var_ty,
            var: inner.clone(),
            init: e(init),
            cond: e(cond),
            step: match step {
                Step::Compound(op, x) => Step::Compound(*op, e(x)),
                other => other.clone(),
            },
            body: body(b),
            span: *span,
        },
        Stmt::Block { body: b, span } => Stmt::Block { body: body(b), span: *span },
    }
}

fn subst_expr(e: &Expr, var: &str, v: i64) -> Expr {
    let s = |x: &Expr| Box::new(subst_expr(x, var, v));
    let ta = |t: &[TArg]| {
        t.iter()
            .map(|a| match a {
                TArg::Expr(x) => TArg::Expr(subst_expr(x, var, v)),
                other => other.clone(),
            })
            .collect()
    };
    let all = |xs: &[Expr]| xs.iter().map(|x| subst_expr(x, var, v)).collect();
    match e {
        Expr::Var { name, span } if name == var => Expr::int(v, *span),
        Expr::Unary { op, expr, span } => Expr::Unary { op: *op, expr: s(expr), span: *span },
        Expr::Binary { op, lhs, rhs, span } => Expr::Binary { op: *op, lhs: s(lhs), rhs: s(rhs), span: *span },
        Expr::Cast { ty, expr, span } => Expr::Cast { ty: *ty, expr: s(expr), span: *span },
        Expr::Call { name, targs, args, span } => {
            Expr::Call { name: name.clone(), targs: ta(targs), args: all(args), span: *span }
        }
        Expr::Method { recv, name, targs, args, span } => {
            Expr::Method { recv: s(recv), name: name.clone(), targs: ta(targs), args: all(args), span: *span }
        }
        Expr::Index { base, index, span } => Expr::Index { base: s(base), index: s(index), span: *span },
        Expr::Apply { base, args, span } => Expr::Apply { base: s(base), args: all(args), span: *span },
        other => other.clone(),
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse, unparse};

    fn unrolled(body: &str) -> String {
        let p = parse(&format!("kernel k() {{ {body} }}")).unwrap();
        let k = unroll(&p.kernels[0]).unwrap();
        unparse(&Program { kernels: vec![k] })
    }

    #[test]
    fn substitutes_literals() {
        let text = unrolled("for (int i = 0; i < 3; i++) { v(i) = i * 2; }");
        assert!(text.contains("v(0) = (0 * 2);"), "{text}");
        assert!(text.contains("v(2) = (2 * 2);"), "{text}");
        assert!(!text.contains("v(3)"), "{text}");
    }

    #[test]
    fn nested_bounds_depend_on_outer() {
        let text = unrolled("for (int k = 2; k <= 8; k <<= 1) { for (int j = k >> 1; j > 0; j >>= 1) { x = j; } }");
        let count = text.matches("x = ").count();
        // k = 2,4,8 gives 1 + 2 + 3 inner trips
        assert_eq!(count, 6, "{text}");
    }

    #[test]
    fn rejects_runtime_bound() {
        let p = parse("kernel k(int n) { for (int i = 0; i < n; i++) { x = i; } }").unwrap();
        let err = unroll(&p.kernels[0]).unwrap_err();
        assert!(err.message.contains("compile-time constant"));
    }

    #[test]
    fn rejects_infinite_loop() {
        let p = parse("kernel k() { for (int i = 0; i >= 0; i += 0) { x = i; } }").unwrap();
        assert!(unroll(&p.kernels[0]).unwrap_err().message.contains("exceeds"));
    }

    #[test]
    fn rejects_assignment_to_loop_variable() {
        let p = parse("kernel k() { for (int i = 0; i < 2; i++) { i = 3; } }").unwrap();
        assert!(unroll(&p.kernels[0]).is_err());
    }
}
