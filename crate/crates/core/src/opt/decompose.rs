use std::collections::{BTreeMap, HashMap};

use crate::ir::{Inst, Module, Op, Ty, ValueId};
use crate::region::Region;
use crate::types::Vector;

/// Byte span `[lo, hi)` touched by a region access.
fn span(region: &Region, size: usize) -> (usize, usize) {
    let offs = region.byte_offsets(size);
    let lo = *offs.iter().min().unwrap() as usize;
    let hi = *offs.iter().max().unwrap() as usize + size;
    (lo, hi)
}

/// A value and the region writes chained onto it.
struct Web {
    root: ValueId,
    /// Members in program order, root first.
    members: Vec<ValueId>,
}

/// Segments of a web: disjoint byte ranges covering every access, or
/// `None` if some use needs the whole value.
fn segments(
    web: &Web,
    insts: &[Inst],
    pos: &HashMap<ValueId, usize>,
    users: &HashMap<ValueId, Vec<usize>>,
    types: &HashMap<ValueId, Ty>,
) -> Option<Vec<(usize, usize)>> {
    let member = |v: &ValueId| web.members.contains(v);
    let mut spans = Vec::new();
    for v in &web.members {
        if let Op::WrRegion { new, region, .. } = &insts[pos[v]].op {
            spans.push((span(region, types[new].elem.size()), types[new].elem.size()));
        }
        for &u in users.get(v).map(Vec::as_slice).unwrap_or(&[]) {
            match &insts[u].op {
                Op::RdRegion { src, region } if src == v => {
                    let t = insts[u].ty.unwrap();
                    spans.push((span(region, t.elem.size()), t.elem.size()));
                }
                Op::WrRegion { old, new, pred, .. } if old == v && new != v && pred.map_or(true, |p| !member(&p)) => {}
                _ => return None,
            }
        }
    }
    spans.sort();
    let mut segs: Vec<(usize, usize)> = Vec::new();
    for &((lo, hi), _) in &spans {
        match segs.last_mut() {
            Some(last) if lo < last.1 => last.1 = last.1.max(hi),
            _ => segs.push((lo, hi)),
        }
    }
    let root_size = types[&web.root].elem.size();
    let aligned = |s: &(usize, usize), size: usize| s.0 % size == 0 && s.1 % size == 0;
    if !segs.iter().all(|s| aligned(s, root_size)) {
        return None;
    }
    for ((lo, _), size) in &spans {
        let seg = segs.iter().find(|s| s.0 <= *lo && *lo < s.1).unwrap();
        if seg.0 % size != 0 {
            return None;
        }
    }
    Some(segs)
}

fn rebase(region: &Region, lo: usize) -> Region {
    Region { offset_bytes: region.offset_bytes - lo as u32, ..*region }
}

/// Splits values whose region accesses fall into byte-disjoint segments
/// into one smaller value per segment.
///
/// Only webs rooted at a constant, or containing at least one region
/// write, are split; region offsets are rewritten relative to each
/// segment's base.
pub fn decompose_vectors(m: &Module) -> (Module, usize) {
    let pos = m.positions();
    let users = m.users();
    let types = m.types();
    let mut in_web: HashMap<ValueId, ValueId> = HashMap::new();
    let mut webs: BTreeMap<usize, Web> = BTreeMap::new();
    for (k, inst) in m.insts.iter().enumerate() {
        let Some(_) = inst.ty else { continue };
        match &inst.op {
            Op::WrRegion { old, .. } => {
                let root = in_web[old];
                in_web.insert(inst.id, root);
                webs.get_mut(&pos[&root]).unwrap().members.push(inst.id);
            }
            _ => {
                in_web.insert(inst.id, inst.id);
                webs.insert(k, Web { root: inst.id, members: vec![inst.id] });
            }
        }
    }
    let mut plans: HashMap<ValueId, Vec<(usize, usize)>> = HashMap::new();
    for web in webs.values() {
        let root_op = &m.insts[pos[&web.root]].op;
        if web.members.len() == 1 && !matches!(root_op, Op::Const(_)) {
            continue;
        }
        if let Some(segs) = segments(web, &m.insts, &pos, &users, &types) {
            if segs.len() > 1 {
                plans.insert(web.root, segs);
            }
        }
    }
    if plans.is_empty() {
        return (m.clone(), 0);
    }

    let mut next = m.next_id().0;
    let mut fresh = || {
        next += 1;
        ValueId(next - 1)
    };
    // (web value, segment index) -> value of that segment
    let mut seg_val: HashMap<(ValueId, usize), ValueId> = HashMap::new();
    let mut out = Vec::with_capacity(m.insts.len());
    let seg_of = |segs: &[(usize, usize)], lo: usize| segs.iter().position(|s| s.0 <= lo && lo < s.1).unwrap();
    for inst in &m.insts {
        let root = in_web.get(&inst.id).copied();
        let plan = root.and_then(|r| plans.get(&r));
        match (&inst.op, plan) {
            (Op::WrRegion { old, new, region, pred }, Some(segs)) => {
                let size = types[new].elem.size();
                let (lo, _) = span(region, size);
                let s = seg_of(segs, lo);
                let (slo, shi) = segs[s];
                let id = fresh();
                let ty = Ty::new(types[old].elem, ((shi - slo) / types[old].elem.size()) as u32);
                let op = Op::WrRegion { old: seg_val[&(*old, s)], new: *new, region: rebase(region, slo), pred: *pred };
                out.push(Inst { id, ty: Some(ty), op });
                for t in 0..segs.len() {
                    let v = if t == s { id } else { seg_val[&(*old, t)] };
                    seg_val.insert((inst.id, t), v);
                }
            }
            (op, Some(segs)) => {
                let elem = inst.ty.unwrap().elem;
                for (t, &(lo, hi)) in segs.iter().enumerate() {
                    let id = fresh();
                    let n = ((hi - lo) / elem.size()) as u32;
                    let piece = match op {
                        Op::Const(c) => {
                            let bytes = c.bytes[lo..hi].to_vec();
                            Op::Const(Vector { ty: c.ty, bytes })
                        }
                        _ => Op::RdRegion { src: inst.id, region: Region::new(0, n, 1, lo as u32, n) },
                    };
                    if !matches!(op, Op::Const(_)) && t == 0 {
                        out.push(inst.clone());
                    }
                    out.push(Inst { id, ty: Some(Ty::new(elem, n)), op: piece });
                    seg_val.insert((inst.id, t), id);
                }
            }
            (Op::RdRegion { src, region }, None) if in_web.get(src).is_some_and(|r| plans.contains_key(r)) => {
                let segs = &plans[&in_web[src]];
                let size = inst.ty.unwrap().elem.size();
                let (lo, _) = span(region, size);
                let s = seg_of(segs, lo);
                let op = Op::RdRegion { src: seg_val[&(*src, s)], region: rebase(region, segs[s].0) };
                out.push(Inst { op, ..inst.clone() });
            }
            _ => out.push(inst.clone()),
        }
    }
    // Web members that are not region reads keep their id only through
    // `seg_val`; nothing else refers to them.
    let n = plans.len();
    (Module { insts: out, ..m.clone() }, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{verify, Builder, Param};
    use crate::opt::testutil::assert_equivalent;
    use crate::types::{BinOp, ElemType};

    /// vector<float,32> whose halves are written and read separately.
    fn halves(spanning: bool) -> Module {
        let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
        let off = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: off }, ElemType::F, 16);
        let acc = b.konst(Vector::zeroed(ElemType::F, 32));
        let lo = b.value(Op::WrRegion { old: acc, new: x, region: Region::new(0, 16, 1, 0, 16), pred: None }, ElemType::F, 32);
        let y = b.value(Op::Binary(BinOp::Mul, x, x), ElemType::F, 16);
        let hi = b.value(Op::WrRegion { old: lo, new: y, region: Region::new(0, 16, 1, 64, 16), pred: None }, ElemType::F, 32);
        let read_at = if spanning { 32 } else { 64 };
        let r = b.value(Op::RdRegion { src: hi, region: Region::new(0, 16, 1, read_at, 16) }, ElemType::F, 16);
        let r0 = b.value(Op::RdRegion { src: hi, region: Region::new(0, 8, 1, 0, 8) }, ElemType::F, 8);
        let o2 = b.konst(Vector::from_i64s(ElemType::D, &[128]));
        b.effect(Op::OwordWrite { surf: 0, offset: o2, data: r });
        let o3 = b.konst(Vector::from_i64s(ElemType::D, &[256]));
        b.effect(Op::OwordWrite { surf: 0, offset: o3, data: r0 });
        b.finish()
    }

    #[test]
    fn disjoint_halves_split() {
        let m = halves(false);
        let (d, n) = decompose_vectors(&m);
        assert_eq!(n, 1);
        verify(&d).unwrap_or_else(|e| panic!("{e}\n{d}"));
        let sizes: Vec<u32> = d
            .insts
            .iter()
            .filter(|i| matches!(i.op, Op::WrRegion { .. }))
            .map(|i| i.ty.unwrap().len)
            .collect();
        assert_eq!(sizes, vec![16, 16]);
        assert!(!d.insts.iter().any(|i| i.ty.is_some_and(|t| t.len == 32)));
        assert_equivalent(&m, &d, 10);
    }

    #[test]
    fn spanning_access_blocks_split() {
        let m = halves(true);
        let (d, n) = decompose_vectors(&m);
        assert_eq!(n, 0);
        assert_eq!(d, m);
    }

    #[test]
    fn whole_value_use_blocks_split() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
        let off = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: off }, ElemType::D, 4);
        let acc = b.konst(Vector::zeroed(ElemType::D, 8));
        let w = b.value(Op::WrRegion { old: acc, new: x, region: Region::new(0, 4, 1, 0, 4), pred: None }, ElemType::D, 8);
        b.effect(Op::OwordWrite { surf: 0, offset: off, data: w });
        let m = b.finish();
        assert_eq!(decompose_vectors(&m).1, 0);
    }
}
