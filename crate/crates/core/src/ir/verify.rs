use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::{exec_len, Module, Op, Param, ScopeTree, Ty, ValueId};
use crate::region::RegionError;
use crate::types::ElemType;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("{inst}: {msg}")]
    Structure { inst: ValueId, msg: String },
    #[error("{inst}: {msg}")]
    Type { inst: ValueId, msg: String },
    #[error("{inst}: operand {value} is not defined before use")]
    Undefined { inst: ValueId, value: ValueId },
    #[error("{inst}: {value} is defined inside a SIMD region and used outside it")]
    Escape { inst: ValueId, value: ValueId },
    #[error("{inst}: {err}")]
    Region { inst: ValueId, err: RegionError },
}

/// Checks SSA form, types, region bounds and SIMD region structure.
pub fn verify(m: &Module) -> Result<(), VerifyError> {
    let tree = m.scopes()?;
    let mut defined: HashMap<ValueId, usize> = HashMap::new();
    let mut types: HashMap<ValueId, Ty> = HashMap::new();
    let mut seen = HashSet::new();
    let pos = m.positions();
    for (k, inst) in m.insts.iter().enumerate() {
        if !seen.insert(inst.id) {
            return Err(VerifyError::Structure { inst: inst.id, msg: "value defined twice".into() });
        }
        let scope = tree.inst_scope[k];
        for v in inst.op.operands() {
            let Some(&dk) = defined.get(&v) else {
                return Err(VerifyError::Undefined { inst: inst.id, value: v });
            };
            if !escapes_ok(m, &tree, &pos, dk, scope) {
                return Err(VerifyError::Escape { inst: inst.id, value: v });
            }
        }
        check_inst(m, k, &types)?;
        if let Some(l) = tree.scopes[scope].mask_len {
            let n = exec_len(&inst.op, inst.ty, &types);
            let err = |msg: String| Err(VerifyError::Type { inst: inst.id, msg });
            if !matches!(inst.op, Op::Const(_) | Op::SimdElse | Op::SimdEnd) && n != l && n != 1 {
                return err(format!("executes {n} lanes inside a {l}-lane SIMD region"));
            }
            if matches!(
                inst.op,
                Op::MediaRead { .. } | Op::MediaWrite { .. } | Op::OwordRead { .. } | Op::OwordWrite { .. }
            ) {
                return err("block memory access inside a per-lane SIMD region".into());
            }
        }
        if let Some(ty) = inst.ty {
            defined.insert(inst.id, k);
            types.insert(inst.id, ty);
        }
    }
    Ok(())
}

/// A value may be used outside the region defining it only when it is a
/// chain of region writes onto a value from an enclosing region: a skipped
/// region then leaves the original value in place.
fn escapes_ok(
    m: &Module,
    tree: &ScopeTree,
    pos: &HashMap<ValueId, usize>,
    def_idx: usize,
    use_scope: usize,
) -> bool {
    let def_scope = tree.inst_scope[def_idx];
    if tree.within(use_scope, def_scope) {
        return true;
    }
    match &m.insts[def_idx].op {
        Op::WrRegion { old, .. } => match pos.get(old) {
            Some(&k) => escapes_ok(m, tree, pos, k, use_scope),
            None => false,
        },
        _ => false,
    }
}

fn check_inst(m: &Module, k: usize, types: &HashMap<ValueId, Ty>) -> Result<(), VerifyError> {
    let inst = &m.insts[k];
    let id = inst.id;
    let terr = |msg: String| VerifyError::Type { inst: id, msg };
    let t = |v: &ValueId| types[v];
    let want_value = !matches!(
        inst.op,
        Op::MediaWrite { .. }
            | Op::OwordWrite { .. }
            | Op::ScatterWrite { .. }
            | Op::SimdIf(_)
            | Op::SimdElse
            | Op::SimdEnd
    );
    let ty = match (want_value, inst.ty) {
        (true, Some(ty)) => ty,
        (false, None) => Ty::new(ElemType::Ud, 0),
        (true, None) => return Err(terr(format!("{} must produce a value", inst.op.name()))),
        (false, Some(_)) => return Err(terr(format!("{} produces no value", inst.op.name()))),
    };
    if want_value && ty.len == 0 {
        return Err(terr("zero-length value".into()));
    }
    let lanes_ok = |v: &ValueId| t(v).len == ty.len || t(v).len == 1;
    let is_int = |v: &ValueId| t(v).elem.is_int();
    let is_int_scalar = |v: &ValueId| t(v).elem.is_int() && t(v).len == 1;
    let surface = |s: &u32| match m.params.get(*s as usize) {
        Some(Param::Surface { .. }) => Ok(()),
        _ => Err(terr(format!("s{s} is not a surface parameter"))),
    };
    match &inst.op {
        Op::Const(v) => {
            if v.ty != ty.elem || v.len() as u32 != ty.len {
                return Err(terr("constant does not match its type".into()));
            }
        }
        Op::Arg(i) => match m.params.get(*i as usize) {
            Some(Param::Scalar { ty: pt, .. }) if *pt == ty.elem && ty.len == 1 => {}
            _ => return Err(terr(format!("arg {i} is not a scalar parameter of type {ty}"))),
        },
        Op::ThreadX | Op::ThreadY => {
            if !ty.elem.is_int() || ty.len != 1 {
                return Err(terr("thread coordinates are integer scalars".into()));
            }
        }
        Op::Binary(op, a, b) => {
            if t(a).elem != ty.elem || t(b).elem != ty.elem {
                return Err(terr(format!("{} operands must have element type {}", op.mnemonic(), ty.elem)));
            }
            if !lanes_ok(a) || !lanes_ok(b) {
                return Err(terr("operand lane count must equal the result or be 1".into()));
            }
            if op.int_only() && ty.elem.is_float() {
                return Err(terr(format!("{} is not defined on floating-point values", op.mnemonic())));
            }
        }
        Op::Cmp(_, a, b) => {
            if t(a).elem != t(b).elem {
                return Err(terr("cmp operands must share an element type".into()));
            }
            if ty.elem != ElemType::Uw || !lanes_ok(a) || !lanes_ok(b) {
                return Err(terr("cmp produces uw lanes matching its operands".into()));
            }
        }
        Op::Sel(mask, a, b) => {
            if t(a).elem != ty.elem || t(b).elem != ty.elem || !is_int(mask) {
                return Err(terr("sel needs an integer mask and operands of the result type".into()));
            }
            if !lanes_ok(a) || !lanes_ok(b) || !lanes_ok(mask) {
                return Err(terr("operand lane count must equal the result or be 1".into()));
            }
        }
        Op::Mov(a) => {
            if !lanes_ok(a) {
                return Err(terr("mov source lane count must equal the result or be 1".into()));
            }
        }
        Op::Any(a) | Op::All(a) => {
            if !is_int(a) || ty != Ty::new(ElemType::Uw, 1) {
                return Err(terr("any/all reduce an integer vector to a uw scalar".into()));
            }
        }
        Op::RdRegion { src, region } => {
            if region.len != ty.len {
                return Err(terr("region length differs from the result length".into()));
            }
            region.validate(ty.elem.size(), t(src).bytes()).map_err(|err| VerifyError::Region { inst: id, err })?;
        }
        Op::WrRegion { old, new, region, pred } => {
            if t(old) != ty {
                return Err(terr("wrregion result must match the old value".into()));
            }
            if region.len != t(new).len {
                return Err(terr("region length differs from the new value length".into()));
            }
            region.validate(t(new).elem.size(), ty.bytes()).map_err(|err| VerifyError::Region { inst: id, err })?;
            region.check_distinct().map_err(|err| VerifyError::Region { inst: id, err })?;
            if let Some(p) = pred {
                if !is_int(p) || t(p).len != region.len {
                    return Err(terr("predicate must be an integer vector of the region length".into()));
                }
            }
        }
        Op::ISelect { src, idx } => {
            if !is_int(idx) || t(idx).len != ty.len || t(src).elem != ty.elem {
                return Err(terr("iselect needs integer indices and the source element type".into()));
            }
        }
        Op::MediaRead { surf, x, y, rows } | Op::MediaWrite { surf, x, y, rows, .. } => {
            surface(surf)?;
            if !is_int_scalar(x) || !is_int_scalar(y) {
                return Err(terr("block coordinates must be integer scalars".into()));
            }
            let bytes = match &inst.op {
                Op::MediaWrite { data, .. } => t(data).bytes(),
                _ => ty.bytes(),
            };
            if *rows == 0 || bytes % *rows as usize != 0 || bytes / *rows as usize > 64 {
                return Err(terr(format!("{bytes} bytes do not form {rows} rows of at most 64 bytes")));
            }
        }
        Op::OwordRead { surf, offset } | Op::OwordWrite { surf, offset, .. } => {
            surface(surf)?;
            if !is_int_scalar(offset) {
                return Err(terr("block offset must be an integer scalar".into()));
            }
            let bytes = match &inst.op {
                Op::OwordWrite { data, .. } => t(data).bytes(),
                _ => ty.bytes(),
            };
            if bytes == 0 || bytes % 16 != 0 {
                return Err(terr(format!("block of {bytes} bytes is not a whole number of owords")));
            }
        }
        Op::ScatterRead { surf, global, offsets } | Op::ScatterWrite { surf, global, offsets, .. } => {
            surface(surf)?;
            if !is_int_scalar(global) || !is_int(offsets) {
                return Err(terr("scattered access needs an integer base and offsets".into()));
            }
            let (elem, len) = match &inst.op {
                Op::ScatterWrite { data, .. } => (t(data).elem, t(data).len),
                _ => (ty.elem, ty.len),
            };
            if len != t(offsets).len || elem.size() > 4 {
                return Err(terr("scattered access moves one element of at most 4 bytes per offset".into()));
            }
        }
        Op::Atomic { op, surf, offsets, src0, src1 } => {
            surface(surf)?;
            let n = t(offsets).len;
            if ty != Ty::new(ElemType::Ud, n) || !is_int(offsets) {
                return Err(terr("atomic returns ud per integer offset".into()));
            }
            let srcs: Vec<&ValueId> = src0.iter().chain(src1).collect();
            if srcs.len() != op.num_sources() {
                return Err(terr(format!("atomic {op} takes {} sources", op.num_sources())));
            }
            if srcs.iter().any(|s| !is_int(s) || t(s).len != n) {
                return Err(terr("atomic sources must be integer vectors matching the offsets".into()));
            }
        }
        Op::SimdIf(mask) => {
            if !is_int(mask) || t(mask).len > 32 {
                return Err(terr("simd_if mask must be an integer vector of at most 32 lanes".into()));
            }
        }
        Op::SimdElse | Op::SimdEnd => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Builder;
    use crate::region::Region;
    use crate::types::{BinOp, CmpRel, Vector};

    fn vec_d(vals: &[i64]) -> Vector {
        Vector::from_i64s(ElemType::D, vals)
    }

    #[test]
    fn accepts_region_chain() {
        let mut b = Builder::new("k", vec![]);
        let a = b.konst(vec_d(&[1; 8]));
        let r = b.value(Op::RdRegion { src: a, region: Region::new(0, 4, 2, 0, 4) }, ElemType::D, 4);
        b.value(Op::WrRegion { old: a, new: r, region: Region::new(0, 4, 1, 16, 4), pred: None }, ElemType::D, 8);
        verify(&b.finish()).unwrap();
    }

    #[test]
    fn rejects_out_of_bounds_region() {
        let mut b = Builder::new("k", vec![]);
        let a = b.konst(vec_d(&[1; 8]));
        b.value(Op::RdRegion { src: a, region: Region::new(0, 4, 2, 8, 4) }, ElemType::D, 4);
        assert!(matches!(verify(&b.finish()), Err(VerifyError::Region { .. })));
    }

    #[test]
    fn rejects_float_bitwise() {
        let mut b = Builder::new("k", vec![]);
        let a = b.konst(Vector::zeroed(ElemType::F, 4));
        b.value(Op::Binary(BinOp::And, a, a), ElemType::F, 4);
        assert!(matches!(verify(&b.finish()), Err(VerifyError::Type { .. })));
    }

    #[test]
    fn rejects_use_before_def() {
        let mut b = Builder::new("k", vec![]);
        let a = b.konst(vec_d(&[1]));
        b.value(Op::Binary(BinOp::Add, a, ValueId(7)), ElemType::D, 1);
        assert!(matches!(verify(&b.finish()), Err(VerifyError::Undefined { .. })));
    }

    #[test]
    fn region_lane_rules() {
        let mut b = Builder::new("k", vec![]);
        let a = b.konst(vec_d(&[1; 8]));
        let z = b.konst(vec_d(&[0]));
        let m = b.value(Op::Cmp(CmpRel::Gt, a, z), ElemType::Uw, 8);
        b.effect(Op::SimdIf(m));
        let c = b.konst(vec_d(&[5; 4]));
        b.value(Op::Binary(BinOp::Add, c, c), ElemType::D, 4);
        b.effect(Op::SimdEnd);
        let err = verify(&b.finish()).unwrap_err();
        assert!(err.to_string().contains("4 lanes inside a 8-lane"), "{err}");
    }

    #[test]
    fn escape_rules() {
        let mut b = Builder::new("k", vec![]);
        let a = b.konst(vec_d(&[1; 8]));
        let z = b.konst(vec_d(&[0]));
        let m = b.value(Op::Cmp(CmpRel::Gt, a, z), ElemType::Uw, 8);
        b.effect(Op::SimdIf(m));
        let s = b.value(Op::Binary(BinOp::Add, a, a), ElemType::D, 8);
        let w = b.value(Op::WrRegion { old: a, new: s, region: Region::identity(8), pred: None }, ElemType::D, 8);
        b.effect(Op::SimdEnd);
        let mut ok = b.module.clone();
        b.value(Op::Binary(BinOp::Add, s, s), ElemType::D, 8);
        assert!(matches!(verify(&b.finish()), Err(VerifyError::Escape { .. })));
        ok.insts.push(crate::ir::Inst {
            id: ValueId(100),
            ty: Some(Ty::new(ElemType::D, 8)),
            op: Op::Binary(BinOp::Add, w, w),
        });
        verify(&ok).unwrap();
    }

    #[test]
    fn unbalanced_markers() {
        let mut b = Builder::new("k", vec![]);
        let a = b.konst(Vector::from_i64s(ElemType::Uw, &[1; 8]));
        b.effect(Op::SimdIf(a));
        assert!(matches!(verify(&b.finish()), Err(VerifyError::Structure { .. })));
    }
}
