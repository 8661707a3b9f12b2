use std::fmt::Write;

use super::ast::*;

/// Prints a program back to source. Expressions are fully parenthesized, so
/// reparsing yields an equal AST.
pub fn unparse(p: &Program) -> String {
    let mut out = String::new();
    for (i, k) in p.kernels.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        kernel(&mut out, k);
    }
    out
}

fn kernel(out: &mut String, k: &Kernel) {
    let params: Vec<String> = k
        .params
        .iter()
        .map(|p| match p {
            ParamDecl::Surface { name, .. } => format!("SurfaceIndex {name}"),
            ParamDecl::Scalar { ty, name, .. } => format!("{} {name}", ty.c_name()),
        })
        .collect();
    let _ = writeln!(out, "kernel {}({}) {{", k.name, params.join(", "));
    for s in &k.body {
        stmt(out, s, 1);
    }
    out.push_str("}\n");
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn block(out: &mut String, body: &[Stmt], depth: usize) {
    out.push_str("{\n");
    for s in body {
        stmt(out, s, depth + 1);
    }
    indent(out, depth);
    out.push('}');
}

fn type_spec(t: &TypeSpec) -> String {
    match t.kind.keyword() {
        None => t.elem.c_name().to_string(),
        Some(kw) => {
            let dims: Vec<String> = t.dims.iter().map(expr).collect();
            format!("{kw}<{}, {}>", t.elem.c_name(), dims.join(", "))
        }
    }
}

fn stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match s {
        Stmt::Decl { ty, name, init, .. } => {
            let _ = write!(out, "{} {name}", type_spec(ty));
            match init {
                Init::None => {}
                Init::Assign(e) => {
                    let _ = write!(out, " = {}", expr(e));
                }
                Init::Ctor(e) => {
                    let _ = write!(out, "({})", expr(e));
                }
                Init::List(items) => {
                    let items: Vec<String> = items.iter().map(expr).collect();
                    let _ = write!(out, " = {{{}}}", items.join(", "));
                }
            }
            out.push_str(";\n");
        }
        Stmt::Assign { target, op, value, .. } => {
            let op = op.map(|o| o.symbol()).unwrap_or("");
            let _ = writeln!(out, "{} {op}= {};", expr(target), expr(value));
        }
        Stmt::Expr { expr: e, .. } => {
            let _ = writeln!(out, "{};", expr(e));
        }
        Stmt::If { cond, then, els, .. } | Stmt::SimdIf { cond, then, els, .. } => {
            let simd = matches!(s, Stmt::SimdIf { .. });
            let _ = write!(out, "{} ({}) ", if simd { "simd_if" } else { "if" }, expr(cond));
            block(out, then, depth);
            if let Some(e) = els {
                out.push_str(if simd { " simd_else " } else { " else " });
                block(out, e, depth);
            }
            out.push('\n');
        }
        Stmt::For { var_ty, var, init, cond, step, body, .. } => {
            let step = match step {
                Step::Inc => format!("{var}++"),
                Step::Dec => format!("{var}--"),
                Step::PreInc => format!("++{var}"),
                Step::PreDec => format!("--{var}"),
                Step::Compound(op, e) => format!("{var} {}= {}", op.symbol(), expr(e)),
            };
            let _ = write!(out, "for ({} {var} = {}; {}; {step}) ", var_ty.c_name(), expr(init), expr(cond));
            block(out, body, depth);
            out.push('\n');
        }
        Stmt::Block { body, .. } => {
            block(out, body, depth);
            out.push('\n');
        }
    }
}

fn targs(t: &[TArg]) -> String {
    if t.is_empty() {
        return String::new();
    }
    let items: Vec<String> = t
        .iter()
        .map(|a| match a {
            TArg::Type(ty) => ty.c_name().to_string(),
            TArg::Expr(e) => expr(e),
        })
        .collect();
    format!("<{}>", items.join(", "))
}

fn args(a: &[Expr]) -> String {
    let items: Vec<String> = a.iter().map(expr).collect();
    format!("({})", items.join(", "))
}

pub(crate) fn expr(e: &Expr) -> String {
    match e {
        Expr::Int { value, unsigned, .. } => {
            let u = if *unsigned { "u" } else { "" };
            if *value < 0 {
                format!("(-{}{u})", value.unsigned_abs())
            } else {
                format!("{value}{u}")
            }
        }
        Expr::Float { value, single, .. } => {
            let text = if *single { format!("{:?}f", *value as f32) } else { format!("{value:?}") };
            if text.starts_with('-') {
                format!("(-{})", &text[1..])
            } else {
                text
            }
        }
        Expr::Var { name, .. } => name.clone(),
        Expr::Unary { op, expr: inner, .. } => format!("({}{})", op.symbol(), expr(inner)),
        Expr::Binary { op, lhs, rhs, .. } => format!("({} {} {})", expr(lhs), op.symbol(), expr(rhs)),
        Expr::Cast { ty, expr: inner, .. } => format!("(({}){})", ty.c_name(), expr(inner)),
        Expr::Call { name, targs: t, args: a, .. } => format!("{name}{}{}", targs(t), args(a)),
        Expr::Method { recv, name, targs: t, args: a, .. } => {
            format!("{}.{name}{}{}", expr(recv), targs(t), args(a))
        }
        Expr::Index { base, index, .. } => format!("{}[{}]", expr(base), expr(index)),
        Expr::Apply { base, args: a, .. } => format!("{}{}", expr(base), args(a)),
    }
}
