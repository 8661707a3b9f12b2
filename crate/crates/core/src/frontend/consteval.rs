use super::ast::{BinaryOp, Expr, UnaryOp};

/// Evaluates an integer constant expression built from literals.
pub fn const_int(e: &Expr) -> Option<i64> {
    Some(match e {
        Expr::Int { value, .. } => *value,
        Expr::Unary { op, expr, .. } => {
            let v = const_int(expr)?;
            match op {
                UnaryOp::Neg => v.checked_neg()?,
                UnaryOp::Not => (v == 0) as i64,
                UnaryOp::BitNot => !v,
            }
        }
        Expr::Binary { op, lhs, rhs, .. } => {
            let (a, b) = (const_int(lhs)?, const_int(rhs)?);
            match op {
                BinaryOp::Mul => a.checked_mul(b)?,
                BinaryOp::Div => a.checked_div(b)?,
                BinaryOp::Rem => a.checked_rem(b)?,
                BinaryOp::Add => a.checked_add(b)?,
                BinaryOp::Sub => a.checked_sub(b)?,
                BinaryOp::Shl => a.checked_shl(u32::try_from(b).ok()?)?,
                BinaryOp::Shr => a.checked_shr(u32::try_from(b).ok()?)?,
                BinaryOp::Lt => (a < b) as i64,
                BinaryOp::Le => (a <= b) as i64,
                BinaryOp::Gt => (a > b) as i64,
                BinaryOp::Ge => (a >= b) as i64,
                BinaryOp::Eq => (a == b) as i64,
                BinaryOp::Ne => (a != b) as i64,
                BinaryOp::And => a & b,
                BinaryOp::Xor => a ^ b,
                BinaryOp::Or => a | b,
                BinaryOp::LogicAnd => (a != 0 && b != 0) as i64,
                BinaryOp::LogicOr => (a != 0 || b != 0) as i64,
            }
        }
        Expr::Cast { ty, expr, .. } if ty.is_int() => {
            let v = const_int(expr)?;
            match crate::types::convert(crate::types::Num::Int(v), *ty) {
                crate::types::Num::Int(i) => i,
                crate::types::Num::Float(_) => return None,
            }
        }
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;

    fn eval(s: &str) -> Option<i64> {
        let p = parse(&format!("kernel k() {{ x = {s}; }}")).unwrap();
        match &p.kernels[0].body[0] {
            crate::frontend::ast::Stmt::Assign { value, .. } => const_int(value),
            _ => unreachable!(),
        }
    }

    #[test]
    fn arithmetic() {
        assert_eq!(eval("2 * 3 + (1 << 4) - 7 % 4"), Some(19));
        assert_eq!(eval("-(5) / 2"), Some(-2));
        assert_eq!(eval("(uchar)300"), Some(44));
        assert_eq!(eval("1 / 0"), None);
        assert_eq!(eval("y + 1"), None);
    }
}
