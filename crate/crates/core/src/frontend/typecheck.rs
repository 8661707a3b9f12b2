use std::collections::HashMap;

use super::ast::*;
use super::consteval::const_int;
use super::typed::*;
use super::{Diagnostic, Span};
use crate::ir::Param;
use crate::memory::AtomicOp;
use crate::region::{Region, ReplicateSpec};
use crate::types::{promote, promote_unary, BinOp, CmpRel, ElemType, Num, Vector};

/// Register-file capacity; no declaration may exceed it.
pub const MAX_DECL_BYTES: usize = 4096;
/// Widest per-lane condition a SIMD region can carry.
pub const MAX_MASK_LANES: u32 = 32;

pub fn typecheck(k: &Kernel) -> Result<TKernel, Diagnostic> {
    let mut c = Checker { params: Vec::new(), vars: Vec::new(), scopes: vec![HashMap::new()], lanes: None };
    for (i, p) in k.params.iter().enumerate() {
        let (name, span, binding, param) = match p {
            ParamDecl::Surface { name, span } => {
                (name, span, Binding::Surface(i as u32), Param::Surface { name: name.clone() })
            }
            ParamDecl::Scalar { ty, name, span } => {
                (name, span, Binding::Scalar(i as u32, *ty), Param::Scalar { name: name.clone(), ty: *ty })
            }
        };
        if c.scopes[0].insert(name.clone(), binding).is_some() {
            return Err(Diagnostic::new(*span, format!("duplicate parameter `{name}`")));
        }
        c.params.push(param);
    }
    let body = c.block(&k.body)?;
    Ok(TKernel { name: k.name.clone(), params: c.params, vars: c.vars, body })
}

#[derive(Clone, Debug)]
enum Binding {
    Var(VarId),
    Ref(Place),
    Surface(u32),
    Scalar(u32, ElemType),
}

struct Checker {
    params: Vec<Param>,
    vars: Vec<TVar>,
    scopes: Vec<HashMap<String, Binding>>,
    /// Lane count of the innermost per-lane SIMD condition.
    lanes: Option<u32>,
}

fn err<T>(span: Span, msg: impl Into<String>) -> Result<T, Diagnostic> {
    Err(Diagnostic::new(span, msg))
}

fn scalar_const(elem: ElemType, n: Num) -> TExpr {
    TExpr { shape: Shape::scalar(elem), kind: TKind::Const(Vector::from_nums(elem, &[n])) }
}

/// Result shape of a lane-wise operation, or `None` on a count mismatch.
fn broadcast(a: Shape, b: Shape) -> Option<Shape> {
    if a.len() == b.len() {
        Some(if a.matrix || !b.matrix { a } else { b })
    } else if a.len() == 1 {
        Some(b)
    } else if b.len() == 1 {
        Some(a)
    } else {
        None
    }
}

fn binop_of(op: BinaryOp) -> Option<BinOp> {
    Some(match op {
        BinaryOp::Mul => BinOp::Mul,
        BinaryOp::Div => BinOp::Div,
        BinaryOp::Rem => BinOp::Rem,
        BinaryOp::Add => BinOp::Add,
        BinaryOp::Sub => BinOp::Sub,
        BinaryOp::Shl => BinOp::Shl,
        BinaryOp::Shr => BinOp::Shr,
        BinaryOp::And => BinOp::And,
        BinaryOp::Xor => BinOp::Xor,
        BinaryOp::Or => BinOp::Or,
        _ => return None,
    })
}

fn cmp_of(op: BinaryOp) -> Option<CmpRel> {
    Some(match op {
        BinaryOp::Lt => CmpRel::Lt,
        BinaryOp::Le => CmpRel::Le,
        BinaryOp::Gt => CmpRel::Gt,
        BinaryOp::Ge => CmpRel::Ge,
        BinaryOp::Eq => CmpRel::Eq,
        BinaryOp::Ne => CmpRel::Ne,
        _ => return None,
    })
}

fn atomic_op(t: &TArg, span: Span) -> Result<AtomicOp, Diagnostic> {
    let TArg::Expr(Expr::Var { name, .. }) = t else {
        return err(span, "write_atomic expects an operation name such as ATOMIC_ADD");
    };
    let lower = name.strip_prefix("ATOMIC_").unwrap_or(name).to_ascii_lowercase();
    AtomicOp::from_name(&lower).ok_or_else(|| Diagnostic::new(span, format!("unknown atomic operation `{name}`")))
}

impl Checker {
    fn lookup(&self, name: &str) -> Option<&Binding> {
        self.scopes.iter().rev().find_map(|s| s.get(name))
    }

    fn declare(&mut self, name: &str, b: Binding, span: Span) -> Result<(), Diagnostic> {
        let scope = self.scopes.last_mut().unwrap();
        if scope.contains_key(name) {
            return err(span, format!("`{name}` is already declared in this scope"));
        }
        scope.insert(name.to_string(), b);
        Ok(())
    }

    fn block(&mut self, body: &[Stmt]) -> Result<Vec<TStmt>, Diagnostic> {
        self.scopes.push(HashMap::new());
        let mut out = Vec::new();
        for s in body {
            self.stmt(s, &mut out)?;
        }
        self.scopes.pop();
        Ok(out)
    }

    /// Rejects instructions whose width does not fit the enclosing SIMD
    /// condition.
    fn check_lanes(&self, n: u32, span: Span) -> Result<(), Diagnostic> {
        match self.lanes {
            Some(l) if n != l && n != 1 => err(
                span,
                format!("operation on {n} elements inside a simd_if with a {l}-lane condition (must be {l} or 1)"),
            ),
            _ => Ok(()),
        }
    }

    fn node(&self, shape: Shape, kind: TKind, span: Span) -> Result<TExpr, Diagnostic> {
        let free = matches!(&kind, TKind::Const(_)) || matches!(&kind, TKind::Read(p) if p.levels.is_empty());
        if !free {
            self.check_lanes(shape.len(), span)?;
        }
        Ok(TExpr { shape, kind })
    }

    fn convert(&self, e: TExpr, elem: ElemType, span: Span) -> Result<TExpr, Diagnostic> {
        if e.shape.elem == elem {
            return Ok(e);
        }
        let shape = e.shape.with_elem(elem);
        if let TKind::Const(v) = &e.kind {
            return Ok(TExpr { shape, kind: TKind::Const(Vector::from_nums(elem, &v.nums())) });
        }
        self.node(shape, TKind::Convert(Box::new(e)), span)
    }

    fn require_int(&self, e: &TExpr, what: &str, span: Span) -> Result<(), Diagnostic> {
        if e.shape.elem.is_float() {
            return err(span, format!("{what} must have an integer type, found {}", e.shape));
        }
        Ok(())
    }

    fn int_scalar(&mut self, e: &Expr, what: &str) -> Result<TExpr, Diagnostic> {
        let t = self.expr(e)?;
        if t.shape.len() != 1 || t.shape.elem.is_float() {
            return err(e.span(), format!("{what} must be an integer scalar, found {}", t.shape));
        }
        Ok(t)
    }

    fn const_arg(&self, e: &Expr, what: &str) -> Result<i64, Diagnostic> {
        const_int(e).ok_or_else(|| Diagnostic::new(e.span(), format!("{what} must be an integer constant")))
    }

    fn const_targs(&self, targs: &[TArg], span: Span) -> Result<Vec<i64>, Diagnostic> {
        targs
            .iter()
            .map(|t| match t {
                TArg::Expr(e) => self.const_arg(e, "template argument"),
                TArg::Type(_) => err(span, "expected an integer template argument"),
            })
            .collect()
    }

    fn surface(&self, e: &Expr) -> Result<u32, Diagnostic> {
        match e {
            Expr::Var { name, span } => match self.lookup(name) {
                Some(Binding::Surface(i)) => Ok(*i),
                _ => err(*span, format!("`{name}` is not a surface parameter")),
            },
            _ => err(e.span(), "expected a surface parameter"),
        }
    }

    fn shape_of(&self, ty: &TypeSpec, span: Span) -> Result<Shape, Diagnostic> {
        let mut dims = Vec::new();
        for d in &ty.dims {
            let v = self.const_arg(d, "dimension")?;
            if v < 1 || v > MAX_DECL_BYTES as i64 {
                return err(d.span(), format!("dimension {v} must be a positive compile-time constant"));
            }
            dims.push(v as u32);
        }
        let shape = match ty.kind {
            ShapeKind::Scalar => Shape::scalar(ty.elem),
            ShapeKind::Vector | ShapeKind::VectorRef => Shape::vector(ty.elem, dims[0]),
            ShapeKind::Matrix | ShapeKind::MatrixRef => Shape::matrix(ty.elem, dims[0], dims[1]),
        };
        if !ty.kind.is_ref() && shape.bytes() > MAX_DECL_BYTES {
            return err(span, format!("{shape} needs {} bytes; the register file holds {MAX_DECL_BYTES}", shape.bytes()));
        }
        Ok(shape)
    }

    // ---- statements ----

    fn stmt(&mut self, s: &Stmt, out: &mut Vec<TStmt>) -> Result<(), Diagnostic> {
        match s {
            Stmt::Decl { ty, name, init, span } => self.decl(ty, name, init, *span, out),
            Stmt::Assign { target, op, value, span } => {
                let place = self.place(target)?;
                let value = match op {
                    None => self.expr(value)?,
                    Some(op) => {
                        let cur = TExpr { shape: place.shape, kind: TKind::Read(place.clone()) };
                        let rhs = self.expr(value)?;
                        self.binary(*op, cur, rhs, *span)?
                    }
                };
                out.push(self.assign(place, value, None, *span)?);
                Ok(())
            }
            Stmt::Expr { expr, span } => self.expr_stmt(expr, *span, out),
            Stmt::If { cond, then, els, span } => {
                if let Some(v) = const_int(cond) {
                    let body = if v != 0 { Some(then) } else { els.as_ref() };
                    if let Some(b) = body {
                        out.extend(self.block(b)?);
                    }
                    return Ok(());
                }
                let c = self.expr(cond)?;
                if c.shape.len() != 1 {
                    return err(*span, format!("`if` needs a scalar condition, found {}; use simd_if", c.shape));
                }
                let c = self.truth(c, *span)?;
                let then = self.block(then)?;
                let els = els.as_deref().map(|b| self.block(b)).transpose()?;
                out.push(TStmt::SimdIf { cond: c, then, els });
                Ok(())
            }
            Stmt::SimdIf { cond, then, els, span } => {
                let c = self.expr(cond)?;
                let n = c.shape.len();
                if n > MAX_MASK_LANES {
                    return err(*span, format!("simd_if condition has {n} lanes; at most {MAX_MASK_LANES} are supported"));
                }
                self.check_lanes(n, *span)?;
                let c = self.truth(c, *span)?;
                let saved = self.lanes;
                if n > 1 {
                    self.lanes = Some(n);
                }
                let then = self.block(then);
                let els = els.as_deref().map(|b| self.block(b)).transpose();
                self.lanes = saved;
                out.push(TStmt::SimdIf { cond: c, then: then?, els: els? });
                Ok(())
            }
            Stmt::For { span, .. } => err(*span, "for-loops must be unrolled before checking"),
            Stmt::Block { body, .. } => {
                out.extend(self.block(body)?);
                Ok(())
            }
        }
    }

    /// Integer condition: comparisons pass through, floats compare against 0.
    fn truth(&self, c: TExpr, span: Span) -> Result<TExpr, Diagnostic> {
        if c.shape.elem.is_int() {
            return Ok(c);
        }
        let zero = scalar_const(c.shape.elem, Num::Float(0.0));
        self.node(c.shape.with_elem(ElemType::Uw), TKind::Cmp(CmpRel::Ne, Box::new(c), Box::new(zero)), span)
    }

    fn decl(
        &mut self,
        ty: &TypeSpec,
        name: &str,
        init: &Init,
        span: Span,
        out: &mut Vec<TStmt>,
    ) -> Result<(), Diagnostic> {
        let shape = self.shape_of(ty, span)?;
        if ty.kind.is_ref() {
            let Init::Assign(target) = init else {
                return err(span, format!("reference `{name}` must be bound with `= <selection>`"));
            };
            let place = self.place(target)?;
            if place.shape.elem != shape.elem || place.shape.len() != shape.len() {
                return err(span, format!("cannot bind {shape} reference to {}", place.shape));
            }
            let place = Place { shape, ..place };
            return self.declare(name, Binding::Ref(place), span);
        }
        let id = self.vars.len();
        self.vars.push(TVar { name: name.to_string(), shape });
        let place = Place { var: id, levels: vec![], shape };
        match init {
            Init::None => {}
            Init::Assign(e) | Init::Ctor(e) => {
                let v = self.expr(e)?;
                out.push(self.assign(place, v, None, span)?);
            }
            Init::List(items) => {
                if items.len() > shape.len() as usize {
                    return err(span, format!("{} initializers for {} elements", items.len(), shape.len()));
                }
                let mut v = Vector::zeroed(shape.elem, shape.len() as usize);
                for (k, item) in items.iter().enumerate() {
                    let t = self.expr(item)?;
                    let TKind::Const(c) = &t.kind else {
                        return err(item.span(), "initializer list entries must be constants");
                    };
                    if c.len() != 1 {
                        return err(item.span(), "initializer list entries must be scalars");
                    }
                    v.set(k, c.get(0));
                }
                let value = TExpr { shape, kind: TKind::Const(v) };
                out.push(self.assign(place, value, None, span)?);
            }
        }
        self.declare(name, Binding::Var(id), span)
    }

    fn assign(&self, place: Place, value: TExpr, pred: Option<TExpr>, span: Span) -> Result<TStmt, Diagnostic> {
        let n = place.shape.len();
        if value.shape.len() != n && value.shape.len() != 1 {
            return err(span, format!("cannot assign {} to {}: element counts differ", value.shape, place.shape));
        }
        for level in &place.levels {
            level.region.check_distinct().map_err(|e| Diagnostic::new(span, format!("invalid write region: {e}")))?;
        }
        self.check_place_lanes(&place, span)?;
        let value = self.convert(value, place.shape.elem, span)?;
        Ok(TStmt::Assign { place, value, pred })
    }

    fn check_place_lanes(&self, place: &Place, span: Span) -> Result<(), Diagnostic> {
        if place.levels.is_empty() {
            return self.check_lanes(place.shape.len(), span);
        }
        for level in &place.levels {
            self.check_lanes(level.region.len, span)?;
        }
        Ok(())
    }

    fn mask_value(&mut self, e: &Expr, n: u32) -> Result<TExpr, Diagnostic> {
        if let Expr::Int { value, .. } = e {
            let bits: Vec<i64> = (0..n).map(|k| (k < 64 && value >> k & 1 == 1) as i64).collect();
            return Ok(TExpr { shape: Shape::vector(ElemType::Uw, n), kind: TKind::Const(Vector::from_i64s(ElemType::Uw, &bits)) });
        }
        let m = self.expr(e)?;
        let m = self.truth(m, e.span())?;
        if m.shape.len() != n {
            return err(e.span(), format!("merge mask has {} lanes, expected {n}", m.shape.len()));
        }
        Ok(m)
    }

    fn expr_stmt(&mut self, e: &Expr, span: Span, out: &mut Vec<TStmt>) -> Result<(), Diagnostic> {
        if let Expr::Call { name, args, .. } = e {
            if name == "read" || name == "write" {
                return self.memory_stmt(name == "read", args, span, out);
            }
        }
        if let Expr::Method { recv, name, args, .. } = e {
            if name == "merge" {
                let place = self.place(recv)?;
                let n = place.shape.len();
                let elem = place.shape.elem;
                let stmt = match args.len() {
                    2 => {
                        let x = self.expr(&args[0])?;
                        let mask = self.mask_value(&args[1], n)?;
                        self.assign(place, x, Some(mask), span)?
                    }
                    3 => {
                        let x = self.expr(&args[0])?;
                        let y = self.expr(&args[1])?;
                        let mask = self.mask_value(&args[2], n)?;
                        for v in [&x, &y] {
                            if v.shape.len() != n && v.shape.len() != 1 {
                                return err(span, format!("merge source {} does not match {}", v.shape, place.shape));
                            }
                        }
                        let x = self.convert(x, elem, span)?;
                        let y = self.convert(y, elem, span)?;
                        let sel = self.node(
                            place.shape,
                            TKind::Sel { mask: Box::new(mask), a: Box::new(x), b: Box::new(y) },
                            span,
                        )?;
                        self.assign(place, sel, None, span)?
                    }
                    k => return err(span, format!("merge takes 2 or 3 arguments, found {k}")),
                };
                out.push(stmt);
                return Ok(());
            }
        }
        let t = self.expr(e)?;
        out.push(TStmt::Eval(t));
        Ok(())
    }

    fn memory_stmt(&mut self, read: bool, args: &[Expr], span: Span, out: &mut Vec<TStmt>) -> Result<(), Diagnostic> {
        let what = if read { "read" } else { "write" };
        if args.len() != 3 && args.len() != 4 {
            return err(span, format!("{what} takes 3 or 4 arguments, found {}", args.len()));
        }
        let surf = self.surface(&args[0])?;
        let last = &args[args.len() - 1];
        let per_lane = self.lanes.is_some();
        if args.len() == 3 {
            if per_lane {
                return err(span, format!("block {what} is not allowed inside a per-lane simd_if"));
            }
            let offset = self.int_scalar(&args[1], "block offset")?;
            if read {
                let place = self.place(last)?;
                check_oword_size(place.shape, last.span())?;
                out.push(TStmt::OwordRead { surf, offset, place });
            } else {
                let data = self.expr(last)?;
                check_oword_size(data.shape, last.span())?;
                out.push(TStmt::OwordWrite { surf, offset, data });
            }
            return Ok(());
        }
        let third = self.expr(&args[2])?;
        if third.shape.len() == 1 {
            if per_lane {
                return err(span, format!("block {what} is not allowed inside a per-lane simd_if"));
            }
            let x = self.int_scalar(&args[1], "block x coordinate")?;
            self.require_int(&third, "block y coordinate", args[2].span())?;
            let y = third;
            let shape = if read { self.place(last)?.shape } else { self.expr(last)?.shape };
            let rows = if shape.matrix { shape.rows } else { 1 };
            let width = shape.bytes() / rows as usize;
            if width > 64 {
                return err(last.span(), format!("2D block rows are {width} bytes wide; at most 64 are supported"));
            }
            if read {
                let place = self.place(last)?;
                out.push(TStmt::MediaRead { surf, x, y, rows, place });
            } else {
                let data = self.expr(last)?;
                out.push(TStmt::MediaWrite { surf, x, y, rows, data });
            }
            return Ok(());
        }
        let global = self.int_scalar(&args[1], "global offset")?;
        let offsets = third;
        self.require_int(&offsets, "element offsets", args[2].span())?;
        self.check_lanes(offsets.shape.len(), span)?;
        let n = offsets.shape.len();
        if read {
            let place = self.place(last)?;
            check_scatter(place.shape, n, last.span())?;
            self.check_place_lanes(&place, span)?;
            out.push(TStmt::ScatterRead { surf, global, offsets, place });
        } else {
            let data = self.expr(last)?;
            check_scatter(data.shape, n, last.span())?;
            out.push(TStmt::ScatterWrite { surf, global, offsets, data });
        }
        Ok(())
    }

    // ---- expressions ----

    /// An assignable location.
    fn place(&mut self, e: &Expr) -> Result<Place, Diagnostic> {
        let t = self.expr(e)?;
        match t.kind {
            TKind::Read(p) => Ok(p),
            _ => err(e.span(), "expression is not assignable (r-value)"),
        }
    }

    fn expr(&mut self, e: &Expr) -> Result<TExpr, Diagnostic> {
        match e {
            Expr::Int { value, unsigned, span } => {
                let elem = if *unsigned || *value > i32::MAX as i64 { ElemType::Ud } else { ElemType::D };
                if *value > u32::MAX as i64 {
                    return err(*span, format!("integer literal {value} does not fit in 32 bits"));
                }
                Ok(scalar_const(elem, Num::Int(*value)))
            }
            Expr::Float { value, single, .. } => {
                let elem = if *single { ElemType::F } else { ElemType::Df };
                Ok(scalar_const(elem, Num::Float(*value)))
            }
            Expr::Var { name, span } => match self.lookup(name).cloned() {
                Some(Binding::Var(id)) => {
                    let shape = self.vars[id].shape;
                    Ok(TExpr { shape, kind: TKind::Read(Place { var: id, levels: vec![], shape }) })
                }
                Some(Binding::Ref(p)) => Ok(TExpr { shape: p.shape, kind: TKind::Read(p) }),
                Some(Binding::Scalar(i, ty)) => Ok(TExpr { shape: Shape::scalar(ty), kind: TKind::Arg(i) }),
                Some(Binding::Surface(_)) => err(*span, format!("surface `{name}` cannot be used as a value")),
                None => err(*span, format!("unknown name `{name}`")),
            },
            Expr::Unary { op, expr, span } => {
                let x = self.expr(expr)?;
                match op {
                    UnaryOp::Neg => {
                        let t = promote_unary(x.shape.elem);
                        let zero = scalar_const(t, Num::Int(0));
                        let x = self.convert(x, t, *span)?;
                        self.arith(BinOp::Sub, zero, x, *span)
                    }
                    UnaryOp::BitNot => {
                        self.require_int(&x, "operand of `~`", *span)?;
                        let t = promote_unary(x.shape.elem);
                        let ones = scalar_const(t, Num::Int(-1));
                        let x = self.convert(x, t, *span)?;
                        self.arith(BinOp::Xor, x, ones, *span)
                    }
                    UnaryOp::Not => {
                        let zero = scalar_const(x.shape.elem, Num::Int(0));
                        self.compare(CmpRel::Eq, x, zero, *span)
                    }
                }
            }
            Expr::Binary { op, lhs, rhs, span } => {
                let a = self.expr(lhs)?;
                let b = self.expr(rhs)?;
                self.binary(*op, a, b, *span)
            }
            Expr::Cast { ty, expr, span } => {
                let x = self.expr(expr)?;
                self.convert(x, *ty, *span)
            }
            Expr::Call { name, targs, args, span } => self.call(name, targs, args, *span),
            Expr::Method { recv, name, targs, args, span } => {
                let r = self.expr(recv)?;
                self.method(r, name, targs, args, *span)
            }
            Expr::Index { base, index, span } => {
                let b = self.expr(base)?;
                let i = self.const_arg(index, "subscript")?;
                if b.shape.matrix {
                    self.row(b, i, *span)
                } else {
                    self.element(b, &[i], *span)
                }
            }
            Expr::Apply { base, args, span } => {
                let b = self.expr(base)?;
                let idx: Vec<i64> = args.iter().map(|a| self.const_arg(a, "element index")).collect::<Result<_, _>>()?;
                self.element(b, &idx, *span)
            }
        }
    }

    fn binary(&mut self, op: BinaryOp, a: TExpr, b: TExpr, span: Span) -> Result<TExpr, Diagnostic> {
        if let Some(rel) = cmp_of(op) {
            return self.compare(rel, a, b, span);
        }
        if matches!(op, BinaryOp::LogicAnd | BinaryOp::LogicOr) {
            let za = scalar_const(a.shape.elem, Num::Int(0));
            let zb = scalar_const(b.shape.elem, Num::Int(0));
            let a = self.compare(CmpRel::Ne, a, za, span)?;
            let b = self.compare(CmpRel::Ne, b, zb, span)?;
            let bop = if op == BinaryOp::LogicAnd { BinOp::And } else { BinOp::Or };
            return self.arith(bop, a, b, span);
        }
        let bop = binop_of(op).unwrap();
        if matches!(bop, BinOp::Shl | BinOp::Shr) {
            self.require_int(&a, "shift operand", span)?;
            self.require_int(&b, "shift count", span)?;
            let t = promote_unary(a.shape.elem);
            let a = self.convert(a, t, span)?;
            let b = self.convert(b, t, span)?;
            return self.arith(bop, a, b, span);
        }
        if (bop.int_only() || bop == BinOp::Rem) && (a.shape.elem.is_float() || b.shape.elem.is_float()) {
            return err(span, format!("`{}` needs integer operands", op.symbol()));
        }
        let t = promote(a.shape.elem, b.shape.elem);
        let a = self.convert(a, t, span)?;
        let b = self.convert(b, t, span)?;
        self.arith(bop, a, b, span)
    }

    fn arith(&self, op: BinOp, a: TExpr, b: TExpr, span: Span) -> Result<TExpr, Diagnostic> {
        let shape = broadcast(a.shape, b.shape).ok_or_else(|| {
            Diagnostic::new(span, format!("element-count mismatch: {} vs {}", a.shape, b.shape))
        })?;
        self.node(shape, TKind::Binary(op, Box::new(a), Box::new(b)), span)
    }

    fn compare(&self, rel: CmpRel, a: TExpr, b: TExpr, span: Span) -> Result<TExpr, Diagnostic> {
        let t = promote(a.shape.elem, b.shape.elem);
        let a = self.convert(a, t, span)?;
        let b = self.convert(b, t, span)?;
        let shape = broadcast(a.shape, b.shape).ok_or_else(|| {
            Diagnostic::new(span, format!("element-count mismatch: {} vs {}", a.shape, b.shape))
        })?;
        self.node(shape.with_elem(ElemType::Uw), TKind::Cmp(rel, Box::new(a), Box::new(b)), span)
    }

    fn call(&mut self, name: &str, targs: &[TArg], args: &[Expr], span: Span) -> Result<TExpr, Diagnostic> {
        if let Some(Binding::Var(_) | Binding::Ref(_)) = self.lookup(name) {
            let base = self.expr(&Expr::Var { name: name.to_string(), span })?;
            let idx: Vec<i64> = args.iter().map(|a| self.const_arg(a, "element index")).collect::<Result<_, _>>()?;
            return self.element(base, &idx, span);
        }
        let arity = |n: usize| -> Result<(), Diagnostic> {
            if args.len() != n {
                return err(span, format!("`{name}` takes {n} arguments, found {}", args.len()));
            }
            Ok(())
        };
        match name {
            "thread_x" | "thread_y" => {
                arity(0)?;
                let kind = if name == "thread_x" { TKind::ThreadX } else { TKind::ThreadY };
                Ok(TExpr { shape: Shape::scalar(ElemType::D), kind })
            }
            "merge" => {
                arity(3)?;
                let a = self.expr(&args[0])?;
                let b = self.expr(&args[1])?;
                let shape = broadcast(a.shape, b.shape)
                    .ok_or_else(|| Diagnostic::new(span, format!("element-count mismatch: {} vs {}", a.shape, b.shape)))?;
                let mask = self.mask_value(&args[2], shape.len().max(1))?;
                let shape = broadcast(shape, mask.shape).ok_or_else(|| {
                    Diagnostic::new(span, format!("merge mask {} does not match {}", mask.shape, shape))
                })?;
                let t = promote(a.shape.elem, b.shape.elem);
                let a = self.convert(a, t, span)?;
                let b = self.convert(b, t, span)?;
                self.node(shape.with_elem(t), TKind::Sel { mask: Box::new(mask), a: Box::new(a), b: Box::new(b) }, span)
            }
            "write_atomic" => {
                if targs.len() != 1 {
                    return err(span, "write_atomic takes one template argument (the operation)");
                }
                let op = atomic_op(&targs[0], span)?;
                let want = 2 + op.num_sources();
                if args.len() != want {
                    return err(span, format!("write_atomic<{op}> takes {want} arguments, found {}", args.len()));
                }
                let surf = self.surface(&args[0])?;
                let offsets = self.expr(&args[1])?;
                self.require_int(&offsets, "atomic offsets", span)?;
                let n = offsets.shape.len();
                let mut srcs = Vec::new();
                for a in &args[2..] {
                    let s = self.expr(a)?;
                    self.require_int(&s, "atomic source", a.span())?;
                    if s.shape.len() != n {
                        return err(a.span(), format!("atomic source has {} lanes, offsets have {n}", s.shape.len()));
                    }
                    srcs.push(Box::new(self.convert(s, ElemType::Ud, a.span())?));
                }
                let mut it = srcs.into_iter();
                let (src0, src1) = (it.next(), it.next());
                self.node(
                    Shape::vector(ElemType::Ud, n),
                    TKind::Atomic { op, surf, offsets: Box::new(offsets), src0, src1 },
                    span,
                )
            }
            "read" | "write" => err(span, format!("`{name}` is a statement and has no value")),
            _ => err(span, format!("unknown function `{name}`")),
        }
    }

    /// Narrows `base` by `region` (in units of `shape.elem`). Places stay
    /// places unless `rvalue` is set.
    fn narrow(&self, base: TExpr, region: Region, shape: Shape, rvalue: bool, span: Span) -> Result<TExpr, Diagnostic> {
        region
            .validate(shape.elem.size(), base.shape.bytes())
            .map_err(|e| Diagnostic::new(span, format!("invalid region: {e}")))?;
        let compose = |outer: &Level, inner_region: Region| -> Option<Region> {
            let offs = outer.region.compose_offsets(outer.elem.size(), &inner_region, shape.elem.size())?;
            Region::from_byte_offsets(&offs, shape.elem.size())
        };
        match base.kind {
            TKind::Read(mut place) if !rvalue => {
                let var_shape = self.vars[place.var].shape;
                match place.levels.last().and_then(|l| compose(l, region).map(|r| (l, r))) {
                    Some((_, r)) => {
                        place.levels.pop();
                        place.levels.push(Level { region: r, elem: shape.elem });
                    }
                    None => place.levels.push(Level { region, elem: shape.elem }),
                }
                if place.levels.len() == 1 {
                    let l = place.levels[0];
                    if l.elem == var_shape.elem && l.region.is_identity(l.elem.size(), var_shape.bytes()) {
                        place.levels.clear();
                    }
                }
                place.shape = shape;
                self.node(shape, TKind::Read(place), span)
            }
            TKind::Region { src, region: inner } => {
                let level = Level { region: inner, elem: base.shape.elem };
                match compose(&level, region) {
                    Some(r) => self.node(shape, TKind::Region { src, region: r }, span),
                    None => {
                        let b = TExpr { shape: base.shape, kind: TKind::Region { src, region: inner } };
                        self.node(shape, TKind::Region { src: Box::new(b), region }, span)
                    }
                }
            }
            kind => {
                let b = TExpr { shape: base.shape, kind };
                self.node(shape, TKind::Region { src: Box::new(b), region }, span)
            }
        }
    }

    fn element(&self, base: TExpr, idx: &[i64], span: Span) -> Result<TExpr, Diagnostic> {
        let s = base.shape;
        let flat = match (s.matrix, idx) {
            (false, [i]) if *i >= 0 && (*i as u32) < s.len() => *i as u32,
            (true, [i, j]) if *i >= 0 && *j >= 0 && (*i as u32) < s.rows && (*j as u32) < s.cols => {
                *i as u32 * s.cols + *j as u32
            }
            (false, [_]) | (true, [_, _]) => {
                return err(span, format!("element index {idx:?} is out of bounds for {s}"));
            }
            _ => return err(span, format!("{s} takes {} element indices", if s.matrix { 2 } else { 1 })),
        };
        let region = Region::broadcast(flat * s.elem.size() as u32, 1);
        self.narrow(base, region, Shape::scalar(s.elem), false, span)
    }

    fn row(&self, base: TExpr, i: i64, span: Span) -> Result<TExpr, Diagnostic> {
        let s = base.shape;
        if !s.matrix || i < 0 || i as u32 >= s.rows {
            return err(span, format!("row {i} is out of bounds for {s}"));
        }
        let region = Region::new(0, s.cols, 1, i as u32 * s.cols * s.elem.size() as u32, s.cols);
        self.narrow(base, region, Shape::vector(s.elem, s.cols), false, span)
    }

    fn method(&mut self, r: TExpr, name: &str, targs: &[TArg], args: &[Expr], span: Span) -> Result<TExpr, Diagnostic> {
        let s = r.shape;
        let esize = s.elem.size() as u32;
        let cargs = |c: &Self| -> Result<Vec<i64>, Diagnostic> {
            args.iter().map(|a| c.const_arg(a, "argument")).collect()
        };
        match name {
            "select" => {
                let t = self.const_targs(targs, span)?;
                let a = cargs(self)?;
                if t.iter().chain(&a).any(|&v| v < 0) {
                    return err(span, "select arguments must be non-negative");
                }
                match (s.matrix, t.as_slice(), a.as_slice()) {
                    (false, [size, stride], [i]) => {
                        let (size, stride, i) = (*size as u32, *stride as u32, *i as u32);
                        if size == 0 || i + (size - 1) * stride >= s.len() {
                            return err(
                                span,
                                format!("select<{size},{stride}>({i}) exceeds the {} elements of {s}", s.len()),
                            );
                        }
                        let region = Region::new(0, size, stride as i32, i * esize, size);
                        self.narrow(r, region, Shape::vector(s.elem, size), false, span)
                    }
                    (true, [vs, vst, hs, hst], [i, j]) => {
                        let (vs, vst, hs, hst, i, j) =
                            (*vs as u32, *vst as u32, *hs as u32, *hst as u32, *i as u32, *j as u32);
                        if vs == 0 || hs == 0 || i + (vs - 1) * vst >= s.rows || j + (hs - 1) * hst >= s.cols {
                            return err(
                                span,
                                format!("select<{vs},{vst},{hs},{hst}>({i},{j}) exceeds the bounds of {s}"),
                            );
                        }
                        let region =
                            Region::new((vst * s.cols) as i32, hs, hst as i32, (i * s.cols + j) * esize, vs * hs);
                        self.narrow(r, region, Shape::matrix(s.elem, vs, hs), false, span)
                    }
                    (false, _, _) => err(span, "vector select takes <size,stride>(offset)"),
                    (true, _, _) => err(span, "matrix select takes <vsize,vstride,hsize,hstride>(row,col)"),
                }
            }
            "format" => {
                let (elem, dims) = match targs {
                    [TArg::Type(t), rest @ ..] => (*t, self.const_targs(rest, span)?),
                    _ => return err(span, "format needs an element type as first template argument"),
                };
                if !args.is_empty() {
                    return err(span, "format takes no arguments");
                }
                let bytes = s.bytes();
                let shape = match dims.as_slice() {
                    [] => {
                        if bytes % elem.size() != 0 {
                            return err(span, format!("{s} ({bytes} bytes) cannot be viewed as {}", elem.c_name()));
                        }
                        Shape::vector(elem, (bytes / elem.size()) as u32)
                    }
                    [rows, cols] if *rows > 0 && *cols > 0 => Shape::matrix(elem, *rows as u32, *cols as u32),
                    _ => return err(span, "format takes <T> or <T,rows,cols>"),
                };
                if shape.bytes() != bytes {
                    return err(span, format!("format to {shape} changes the size from {bytes} to {} bytes", shape.bytes()));
                }
                self.narrow(r, Region::identity(shape.len()), shape, false, span)
            }
            "row" => {
                let a = cargs(self)?;
                let [i] = a.as_slice() else { return err(span, "row takes one argument") };
                self.row(r, *i, span)
            }
            "column" => {
                let a = cargs(self)?;
                let [j] = a.as_slice() else { return err(span, "column takes one argument") };
                if !s.matrix || *j < 0 || *j as u32 >= s.cols {
                    return err(span, format!("column {j} is out of bounds for {s}"));
                }
                let region = Region::new(s.cols as i32, 1, 0, *j as u32 * esize, s.rows);
                self.narrow(r, region, Shape::vector(s.elem, s.rows), false, span)
            }
            "replicate" => {
                let t = self.const_targs(targs, span)?;
                let a = cargs(self)?;
                if t.iter().chain(&a).any(|&v| v < 0) {
                    return err(span, "replicate arguments must be non-negative");
                }
                let t: Vec<u32> = t.into_iter().map(|v| v as u32).collect();
                let start = match (s.matrix, a.as_slice()) {
                    (_, []) => 0,
                    (false, [i]) => *i as u32,
                    (true, [i, j]) => *i as u32 * s.cols + *j as u32,
                    _ => return err(span, "replicate takes (offset) or (row, col)"),
                };
                let spec = match t.as_slice() {
                    [k] if a.is_empty() => ReplicateSpec { k: *k, vs: 0, w: s.len(), hs: 1, start: 0 },
                    [k, w] => ReplicateSpec { k: *k, vs: 0, w: *w, hs: 1, start },
                    [k, vs, w] => ReplicateSpec { k: *k, vs: *vs, w: *w, hs: 1, start },
                    [k, vs, w, hs] => ReplicateSpec { k: *k, vs: *vs, w: *w, hs: *hs, start },
                    _ => return err(span, "replicate takes <K>(), <K,W>(i), <K,VS,W>(i) or <K,VS,W,HS>(i)"),
                };
                if spec.k == 0 || spec.w == 0 {
                    return err(span, "replicate block count and width must be positive");
                }
                let last = spec.start + (spec.k - 1) * spec.vs + (spec.w - 1) * spec.hs;
                if last >= s.len() {
                    return err(span, format!("replicate reads element {last} of the {} in {s}", s.len()));
                }
                let n = spec.k * spec.w;
                if n as usize * s.elem.size() > MAX_DECL_BYTES {
                    return err(span, format!("replicate result of {n} elements exceeds the register file"));
                }
                self.narrow(r, spec.to_region(s.elem.size()), Shape::vector(s.elem, n), true, span)
            }
            "iselect" => {
                let [idx] = args else { return err(span, "iselect takes one index vector") };
                let idx = self.expr(idx)?;
                self.require_int(&idx, "iselect indices", span)?;
                let shape = Shape::vector(s.elem, idx.shape.len());
                self.node(shape, TKind::ISelect { src: Box::new(r), idx: Box::new(idx) }, span)
            }
            "any" | "all" => {
                if !args.is_empty() {
                    return err(span, format!("{name} takes no arguments"));
                }
                self.require_int(&r, "any/all operand", span)?;
                self.check_lanes(s.len(), span)?;
                let kind = if name == "any" { TKind::Any(Box::new(r)) } else { TKind::All(Box::new(r)) };
                Ok(TExpr { shape: Shape::scalar(ElemType::Uw), kind })
            }
            "merge" => err(span, "merge is a statement; use merge(x, y, mask) for a value"),
            _ => err(span, format!("unknown method `{name}`")),
        }
    }
}

fn check_oword_size(shape: Shape, span: Span) -> Result<(), Diagnostic> {
    if shape.bytes() % 16 != 0 {
        return err(span, format!("oword block of {} bytes is not a multiple of 16", shape.bytes()));
    }
    Ok(())
}

fn check_scatter(shape: Shape, n: u32, span: Span) -> Result<(), Diagnostic> {
    if shape.len() != n {
        return err(span, format!("{shape} does not match {n} offsets"));
    }
    if shape.elem.size() > 4 {
        return err(span, "scattered access moves elements of at most 4 bytes");
    }
    Ok(())
}
