use std::collections::{BTreeSet, HashMap};

use crate::ir::{exec_len, Module, Op, Ty, ValueId};
use crate::region::Region;

/// Composes `outer` applied after `inner`, when a single region reproduces
/// the combined byte map. Every lane is checked explicitly.
pub(crate) fn compose(inner: &Region, inner_size: usize, outer: &Region, outer_size: usize, src_bytes: usize) -> Option<Region> {
    let offsets = inner.compose_offsets(inner_size, outer, outer_size)?;
    let r = Region::from_byte_offsets(&offsets, outer_size)?;
    r.validate(outer_size, src_bytes).ok()?;
    (r.byte_offsets(outer_size) == offsets).then_some(r)
}

fn bytes_of(region: &Region, size: usize) -> BTreeSet<i64> {
    region.byte_offsets(size).into_iter().flat_map(|b| b..b + size as i64).collect()
}

struct Def {
    op: Op,
    ty: Ty,
    scope: usize,
    masked: bool,
}

/// Combines region instructions:
/// - a read of a read becomes one read when the composition is a region;
/// - an identity read is replaced by its source;
/// - a read of a write returns the written value, looking past writes to
///   disjoint bytes;
/// - a write whose target bytes are all overwritten by the next write in
///   the chain is bypassed.
///
/// Predicated writes are never combined.
pub fn collapse_regions(m: &Module) -> (Module, usize) {
    let Ok(tree) = m.scopes() else { return (m.clone(), 0) };
    let mut out = m.clone();
    let mut subst: HashMap<ValueId, ValueId> = HashMap::new();
    let mut defs: HashMap<ValueId, Def> = HashMap::new();
    let mut types: HashMap<ValueId, Ty> = HashMap::new();
    let mut combined = 0;
    let resolve = |subst: &HashMap<ValueId, ValueId>, mut v: ValueId| {
        while let Some(&n) = subst.get(&v) {
            v = n;
        }
        v
    };
    for (k, inst) in out.insts.iter_mut().enumerate() {
        inst.op.map_operands(|v| resolve(&subst, v));
        let Some(ty) = inst.ty else { continue };
        types.insert(inst.id, ty);
        let scope = tree.inst_scope[k];
        loop {
            let changed = match &mut inst.op {
                Op::RdRegion { src, region } => {
                    let s = &defs[src];
                    let esz = ty.elem.size();
                    match &s.op {
                        _ if ty == s.ty && region.is_identity(esz, s.ty.bytes()) => {
                            subst.insert(inst.id, *src);
                            combined += 1;
                            break;
                        }
                        Op::RdRegion { src: src0, region: r1 } => {
                            let src_bytes = types[src0].bytes();
                            match compose(r1, s.ty.elem.size(), region, esz, src_bytes) {
                                Some(r) => {
                                    *src = *src0;
                                    *region = r;
                                    true
                                }
                                None => false,
                            }
                        }
                        Op::WrRegion { .. } => {
                            // Walking past unrelated writes only pays off when
                            // it reaches the write of exactly this region;
                            // otherwise it would keep older vectors alive.
                            let mut cur = *src;
                            let found = loop {
                                let d = &defs[&cur];
                                let Op::WrRegion { old, new, region: r1, pred } = &d.op else { break None };
                                if pred.is_none()
                                    && !d.masked
                                    && d.scope == scope
                                    && r1 == region
                                    && types[new].elem == ty.elem
                                {
                                    break Some(*new);
                                }
                                let nsz = types[new].elem.size();
                                if !bytes_of(r1, nsz).is_disjoint(&bytes_of(region, esz)) {
                                    break None;
                                }
                                cur = *old;
                            };
                            if let Some(n) = found {
                                subst.insert(inst.id, n);
                                combined += 1;
                                break;
                            }
                            false
                        }
                        _ => false,
                    }
                }
                Op::WrRegion { old, new, region, pred: None } => {
                    let masked = tree.is_masked(scope, types[new].len);
                    match &defs[old].op {
                        Op::WrRegion { old: base, new: n1, region: r1, pred: None } if defs[old].scope == scope => {
                            let (s1, s2) = (types[n1].elem.size(), types[new].elem.size());
                            let covers = if masked {
                                defs[old].masked && r1 == region && s1 == s2
                            } else {
                                bytes_of(r1, s1).is_subset(&bytes_of(region, s2))
                            };
                            if covers {
                                *old = *base;
                            }
                            covers
                        }
                        _ => false,
                    }
                }
                _ => false,
            };
            if !changed {
                break;
            }
            combined += 1;
        }
        let masked = tree.is_masked(scope, exec_len(&inst.op, inst.ty, &types));
        defs.insert(inst.id, Def { op: inst.op.clone(), ty, scope, masked });
    }
    (out, combined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Builder, Param};
    use crate::opt::testutil::assert_equivalent;
    use crate::types::{ElemType, Vector};

    fn read_buf(b: &mut Builder, n: u32) -> ValueId {
        let off = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        b.value(Op::OwordRead { surf: 0, offset: off }, ElemType::D, n)
    }

    fn store(b: &mut Builder, v: ValueId, at: i64) {
        let off = b.konst(Vector::from_i64s(ElemType::D, &[at]));
        b.effect(Op::OwordWrite { surf: 0, offset: off, data: v });
    }

    fn op_of(m: &Module, v: ValueId) -> &Op {
        &m.insts.iter().find(|i| i.id == v).unwrap().op
    }

    #[test]
    fn nested_selects_become_one() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
        let x = read_buf(&mut b, 16);
        let r1 = b.value(Op::RdRegion { src: x, region: Region::new(0, 8, 2, 0, 8) }, ElemType::D, 8);
        let r2 = b.value(Op::RdRegion { src: r1, region: Region::new(0, 4, 2, 4, 4) }, ElemType::D, 4);
        store(&mut b, r2, 256);
        let before = b.finish();
        let (after, n) = collapse_regions(&before);
        assert!(n >= 1);
        let Op::RdRegion { src, region } = op_of(&after, r2) else { panic!() };
        assert_eq!(*src, x);
        // brute-force index map: outer lane k reads inner lane 1 + 2k, which is source index 2(1 + 2k)
        let want: Vec<i64> = (0..4).map(|k| 2 * (1 + 2 * k) * 4).collect();
        assert_eq!(region.byte_offsets(4), want);
        assert_eq!(want, vec![8, 24, 40, 56]);
        assert!(after.insts.len() <= before.insts.len());
        assert_equivalent(&before, &after, 5);
    }

    #[test]
    fn identity_read_is_bypassed() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
        let x = read_buf(&mut b, 8);
        let r1 = b.value(Op::RdRegion { src: x, region: Region::new(0, 4, 2, 0, 4) }, ElemType::D, 4);
        let r2 = b.value(Op::RdRegion { src: r1, region: Region::identity(4) }, ElemType::D, 4);
        let w = b.value(Op::WrRegion { old: x, new: r2, region: Region::new(0, 4, 1, 0, 4), pred: None }, ElemType::D, 8);
        store(&mut b, w, 256);
        let before = b.finish();
        let (after, _) = collapse_regions(&before);
        let Op::WrRegion { new, .. } = op_of(&after, w) else { panic!() };
        assert_eq!(*new, r1);
        assert_equivalent(&before, &after, 5);
    }

    #[test]
    fn non_affine_composition_is_kept() {
        // Inner 2-D region with rows of 2 at stride 5; the outer read crosses rows.
        let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
        let x = read_buf(&mut b, 16);
        let inner = Region::new(5, 2, 1, 0, 6);
        let r1 = b.value(Op::RdRegion { src: x, region: inner }, ElemType::D, 6);
        let outer = Region::new(0, 3, 1, 4, 3);
        let r2 = b.value(Op::RdRegion { src: r1, region: outer }, ElemType::D, 3);
        store(&mut b, r2, 256);
        let before = b.finish();
        // source indices 1, 5, 6: deltas 4 then 1 admit no single region
        let idx: Vec<i64> = outer.byte_offsets(4).iter().map(|&o| inner.elem_index((o / 4) as u32)).collect();
        assert_eq!(idx, vec![1, 5, 6]);
        assert!(Region::from_byte_offsets(&[4, 20, 24], 4).is_none());
        let (after, n) = collapse_regions(&before);
        assert_eq!(n, 0);
        assert_eq!(after, before);
    }

    #[test]
    fn read_after_write() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
        let x = read_buf(&mut b, 16);
        let y = b.value(Op::RdRegion { src: x, region: Region::new(0, 4, 1, 0, 4) }, ElemType::D, 4);
        let w = b.value(Op::WrRegion { old: x, new: y, region: Region::new(0, 4, 1, 32, 4), pred: None }, ElemType::D, 16);
        let same = b.value(Op::RdRegion { src: w, region: Region::new(0, 4, 1, 32, 4) }, ElemType::D, 4);
        let other = b.value(Op::RdRegion { src: w, region: Region::new(0, 4, 1, 0, 4) }, ElemType::D, 4);
        let z = b.value(Op::RdRegion { src: x, region: Region::new(0, 4, 1, 48, 4) }, ElemType::D, 4);
        let w2 = b.value(Op::WrRegion { old: w, new: z, region: Region::new(0, 4, 1, 16, 4), pred: None }, ElemType::D, 16);
        let past = b.value(Op::RdRegion { src: w2, region: Region::new(0, 4, 1, 32, 4) }, ElemType::D, 4);
        let sum = b.value(Op::Binary(crate::types::BinOp::Add, same, other), ElemType::D, 4);
        let sum = b.value(Op::Binary(crate::types::BinOp::Add, sum, past), ElemType::D, 4);
        store(&mut b, sum, 256);
        let before = b.finish();
        let (after, _) = collapse_regions(&before);
        let Op::Binary(_, s1, p) = op_of(&after, sum) else { panic!() };
        assert_eq!(*p, y);
        let Op::Binary(_, a, c) = op_of(&after, *s1) else { panic!() };
        assert_eq!(*a, y);
        // A read that finds no matching write stays where it was.
        assert!(matches!(op_of(&after, *c), Op::RdRegion { src, .. } if *src == w));
        assert_equivalent(&before, &after, 5);
    }

    #[test]
    fn covered_write_is_bypassed() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
        let x = read_buf(&mut b, 16);
        let y = b.value(Op::RdRegion { src: x, region: Region::new(0, 4, 1, 16, 4) }, ElemType::D, 4);
        let w1 = b.value(Op::WrRegion { old: x, new: y, region: Region::new(0, 4, 2, 0, 4), pred: None }, ElemType::D, 16);
        let z = b.value(Op::RdRegion { src: x, region: Region::new(0, 8, 1, 32, 8) }, ElemType::D, 8);
        let w2 = b.value(Op::WrRegion { old: w1, new: z, region: Region::new(0, 8, 1, 0, 8), pred: None }, ElemType::D, 16);
        store(&mut b, w2, 256);
        let before = b.finish();
        let (after, _) = collapse_regions(&before);
        let Op::WrRegion { old, .. } = op_of(&after, w2) else { panic!() };
        assert_eq!(*old, x);
        assert_equivalent(&before, &after, 5);
    }
}
