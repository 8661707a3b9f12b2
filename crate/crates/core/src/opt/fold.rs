use std::collections::HashMap;

use crate::ir::eval::eval_pure;
use crate::ir::{exec_len, Module, Op, ValueId};
use crate::region::wrregion_eval;
use crate::types::{ElemType, Num, Vector};

/// Replaces instructions whose operands are all constants by their value.
///
/// Lane-independent operations fold anywhere. Reductions fold only where
/// no per-lane mask applies to them, and region writes only at top level,
/// since a skipped region leaves the old value in place.
///
/// A constant costs one move per run of equal elements to materialize, so a
/// fold is skipped when the result costs more than the instruction's own
/// 64-byte pieces plus the constant operands that die with it.
pub fn fold_constants(m: &Module) -> (Module, usize) {
    let Ok(tree) = m.scopes() else { return (m.clone(), 0) };
    let users = m.users();
    let mut out = m.clone();
    let mut consts: HashMap<ValueId, Vector> = HashMap::new();
    let mut types = HashMap::new();
    let mut folded = 0;
    for (k, inst) in out.insts.iter_mut().enumerate() {
        if let Some(t) = inst.ty {
            types.insert(inst.id, t);
        }
        if let Op::Const(c) = &inst.op {
            consts.insert(inst.id, c.clone());
            continue;
        }
        let Some(ty) = inst.ty else { continue };
        if !inst.op.operands().iter().all(|v| consts.contains_key(v)) || inst.op.operands().is_empty() {
            continue;
        }
        let c = |v: &ValueId| &consts[v];
        let scope = tree.inst_scope[k];
        let masked = tree.is_masked(scope, exec_len(&inst.op, inst.ty, &types));
        let value = match &inst.op {
            Op::WrRegion { old, new, region, pred } if scope == 0 => {
                let p: Option<Vec<bool>> = pred.map(|p| c(&p).nums().into_iter().map(Num::is_nonzero).collect());
                wrregion_eval(c(old), c(new), region, p.as_deref()).ok()
            }
            Op::Any(a) | Op::All(a) if !masked => {
                let mut it = c(a).nums().into_iter().map(Num::is_nonzero);
                let r = if matches!(inst.op, Op::Any(_)) { it.any(|x| x) } else { it.all(|x| x) };
                Some(Vector::from_i64s(ElemType::Uw, &[r as i64]))
            }
            op => eval_pure(op, ty, c).and_then(Result::ok),
        };
        let mut ops = inst.op.operands();
        ops.dedup();
        let freed: usize = ops.iter().filter(|v| users.get(v).map_or(0, Vec::len) == 1).map(|v| consts[v].runs()).sum();
        let pieces = (ty.bytes() as usize).div_ceil(64);
        if let Some(v) = value.filter(|v| v.runs() <= pieces + freed) {
            inst.op = Op::Const(v.clone());
            consts.insert(inst.id, v);
            folded += 1;
        }
    }
    (out, folded)
}
