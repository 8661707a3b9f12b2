//! Deciding which IR instructions fold into the instruction that uses them.

use std::collections::{HashMap, HashSet};

use crate::ir::{Inst, Module, Op, Ty, ValueId};
use crate::region::Region;

/// Gives every multi-use `rdregion` a private copy per use, placed right
/// before the user, so each can be baled into its consumer. Returns the
/// number of clones made.
pub fn clone_regions(m: &Module) -> (Module, usize) {
    let uses = m.use_counts();
    let users = m.users();
    let mut next = m.next_id().0;
    let mut out = Module::new(m.name.clone(), m.params.clone());
    // Only worth it when every use could read the region in place.
    let defs: HashMap<ValueId, Inst> = m
        .insts
        .iter()
        .filter(|i| matches!(i.op, Op::RdRegion { .. }) && uses.get(&i.id).copied().unwrap_or(0) > 1)
        .filter(|i| users[&i.id].iter().all(|&u| region_slot(&m.insts[u].op, i.id)))
        .map(|i| (i.id, i.clone()))
        .collect();
    let mut seen: HashSet<ValueId> = HashSet::new();
    let mut cloned = 0;
    for inst in &m.insts {
        let mut inst = inst.clone();
        let mut extra = Vec::new();
        inst.op.map_operands(|v| {
            let Some(d) = defs.get(&v) else { return v };
            if seen.insert(v) {
                return v;
            }
            let id = ValueId(next);
            next += 1;
            extra.push(Inst { id, ty: d.ty, op: d.op.clone() });
            id
        });
        cloned += extra.len();
        out.insts.extend(extra);
        out.insts.push(inst);
    }
    (out, cloned)
}

/// How a value is consumed by its single user.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fold {
    /// Read through its region by the user.
    Region,
    /// Conversion carried out by a converting `mov` user reading the source type.
    Convert,
    /// Computes directly into the region written by its `wrregion` user.
    Main,
}

/// Which instructions fold into their user and how.
pub struct BaleMap {
    pub folds: HashMap<ValueId, Fold>,
}

impl BaleMap {
    pub fn fold(&self, v: ValueId) -> Option<Fold> {
        self.folds.get(&v).copied()
    }

    /// Values emitted as instructions of their own.
    pub fn is_root(&self, v: ValueId) -> bool {
        !self.folds.contains_key(&v)
    }
}

/// Operand slots able to read a register region directly.
fn region_slot(user: &Op, v: ValueId) -> bool {
    match user {
        Op::Binary(..) | Op::Cmp(..) | Op::Sel(..) | Op::Mov(_) | Op::Any(_) | Op::All(_) => true,
        Op::WrRegion { new, pred, old, .. } => (*new == v || *pred == Some(v)) && *old != v,
        Op::ISelect { idx, src } => *idx == v && *src != v,
        Op::ScatterRead { .. } | Op::ScatterWrite { .. } | Op::Atomic { .. } => true,
        Op::MediaRead { .. } | Op::OwordRead { .. } => true,
        Op::MediaWrite { x, y, data, .. } => (*x == v || *y == v) && *data != v,
        Op::OwordWrite { offset, data, .. } => *offset == v && *data != v,
        _ => false,
    }
}

/// Whether reading `outer` through `inner` keeps every element contiguous.
pub(crate) fn nests(inner: &Region, inner_size: usize, outer: &Region, outer_size: usize, outer_len: u32) -> bool {
    let map = |b: i64| {
        let e = b / inner_size as i64;
        inner.byte_offset(e as u32, inner_size) + b % inner_size as i64
    };
    (0..outer_len).all(|k| {
        let o = outer.byte_offset(k, outer_size);
        let first = map(o);
        (1..outer_size as i64).all(|i| map(o + i) == first + i)
    })
}

/// Decides folds, users before producers.
pub fn analyze_bales(m: &Module) -> BaleMap {
    let uses = m.use_counts();
    let types: HashMap<ValueId, Ty> = m.types();
    let mut user_of: HashMap<ValueId, usize> = HashMap::new();
    for (k, inst) in m.insts.iter().enumerate() {
        for v in inst.op.operands() {
            user_of.insert(v, k);
        }
    }
    let mut folds: HashMap<ValueId, Fold> = HashMap::new();
    for inst in m.insts.iter().rev() {
        let v = inst.id;
        if uses.get(&v).copied() != Some(1) {
            continue;
        }
        let user = &m.insts[user_of[&v]];
        let fold = match &inst.op {
            Op::RdRegion { region, .. } => {
                let ok = match &user.op {
                    Op::RdRegion { region: outer, .. } if folds.get(&user.id) == Some(&Fold::Region) => {
                        let (t, ut) = (types[&v], types[&user.id]);
                        nests(region, t.elem.size(), outer, ut.elem.size(), ut.len)
                    }
                    op => region_slot(op, v),
                };
                ok.then_some(Fold::Region)
            }
            Op::Mov(x) => {
                let exact = types[x].elem.embeds_exactly_in(types[&v].elem);
                // Arithmetic reads operands of its own type; only conversion
                // chains collapse.
                let converts = matches!(&user.op, Op::Mov(_));
                if exact && converts {
                    Some(Fold::Convert)
                } else if matches!(&user.op, Op::WrRegion { new, .. } if *new == v) {
                    Some(Fold::Main)
                } else {
                    None
                }
            }
            Op::Binary(..) | Op::Cmp(..) | Op::Sel(..) => {
                matches!(&user.op, Op::WrRegion { new, .. } if *new == v).then_some(Fold::Main)
            }
            _ => None,
        };
        if let Some(f) = fold {
            folds.insert(v, f);
        }
    }
    BaleMap { folds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{verify, Builder, Param};
    use crate::types::{BinOp, ElemType, Vector};

    fn surf() -> Vec<Param> {
        vec![Param::Surface { name: "s".into() }]
    }

    #[test]
    fn read_add_write_chain_is_one_bale() {
        let mut b = Builder::new("k", surf());
        let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::F, 16);
        let r = b.value(Op::RdRegion { src: x, region: Region::new(8, 8, 1, 0, 8) }, ElemType::F, 8);
        let one = b.konst(Vector::from_i64s(ElemType::F, &[1]));
        let a = b.value(Op::Binary(BinOp::Add, r, one), ElemType::F, 8);
        let w = b.value(Op::WrRegion { old: x, new: a, region: Region::new(8, 8, 1, 32, 8), pred: None }, ElemType::F, 16);
        b.effect(Op::OwordWrite { surf: 0, offset: z, data: w });
        let bales = analyze_bales(&b.finish());
        assert_eq!(bales.fold(r), Some(Fold::Region));
        assert_eq!(bales.fold(a), Some(Fold::Main));
        assert!(bales.is_root(w));
        assert!(bales.is_root(x));
    }

    #[test]
    fn byte_region_feeds_float_conversion() {
        let mut b = Builder::new("k", surf());
        let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::Ub, 32);
        let r = b.value(Op::RdRegion { src: x, region: Region::new(8, 8, 1, 3, 16) }, ElemType::Ub, 16);
        let f = b.value(Op::Mov(r), ElemType::F, 16);
        b.effect(Op::OwordWrite { surf: 0, offset: z, data: f });
        let bales = analyze_bales(&b.finish());
        assert_eq!(bales.fold(r), Some(Fold::Region));
        assert!(bales.is_root(f));
    }

    #[test]
    fn multi_use_regions_are_cloned() {
        let mut b = Builder::new("k", surf());
        let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::D, 16);
        let r = b.value(Op::RdRegion { src: x, region: Region::new(16, 8, 2, 0, 8) }, ElemType::D, 8);
        let a1 = b.value(Op::Binary(BinOp::Add, r, z), ElemType::D, 8);
        let a2 = b.value(Op::Binary(BinOp::Mul, r, a1), ElemType::D, 8);
        b.effect(Op::OwordWrite { surf: 0, offset: z, data: a2 });
        let m = b.finish();
        let (c, n) = clone_regions(&m);
        assert_eq!(n, 1);
        verify(&c).unwrap();
        let counts = c.use_counts();
        let rds: Vec<ValueId> =
            c.insts.iter().filter(|i| matches!(i.op, Op::RdRegion { .. })).map(|i| i.id).collect();
        assert_eq!(rds.len(), 2);
        assert!(rds.iter().all(|r| counts[r] == 1));
        let bales = analyze_bales(&c);
        assert!(rds.iter().all(|&r| bales.fold(r) == Some(Fold::Region)));
    }

    #[test]
    fn lossy_conversions_and_payloads_stay_roots() {
        let mut b = Builder::new("k", surf());
        let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::F, 8);
        let d = b.value(Op::Mov(x), ElemType::D, 8);
        let s = b.value(Op::Binary(BinOp::Add, d, z), ElemType::D, 8);
        let r = b.value(Op::RdRegion { src: s, region: Region::new(0, 4, 1, 0, 4) }, ElemType::D, 4);
        b.effect(Op::OwordWrite { surf: 0, offset: z, data: r });
        let bales = analyze_bales(&b.finish());
        assert!(bales.is_root(d));
        assert!(bales.is_root(r));
    }
}
