use std::collections::{HashMap, HashSet};

use crate::ir::{Module, Op, Ty, ValueId};
use crate::types::Vector;

/// Per-byte liveness of one value.
type Live = Vec<bool>;

fn lane_live(live: &Live, k: usize, size: usize) -> bool {
    live[k * size..(k + 1) * size].iter().any(|&b| b)
}

fn mark_all(live: &mut HashMap<ValueId, Live>, types: &HashMap<ValueId, Ty>, v: ValueId) {
    let entry = live.entry(v).or_insert_with(|| vec![false; types[&v].bytes()]);
    entry.iter_mut().for_each(|b| *b = true);
}

fn mark_range(live: &mut HashMap<ValueId, Live>, types: &HashMap<ValueId, Ty>, v: ValueId, from: usize, len: usize) {
    let entry = live.entry(v).or_insert_with(|| vec![false; types[&v].bytes()]);
    entry[from..from + len].iter_mut().for_each(|b| *b = true);
}

/// Marks lane `k` of an element-wise operand; scalars broadcast.
fn mark_lane(live: &mut HashMap<ValueId, Live>, types: &HashMap<ValueId, Ty>, v: ValueId, k: usize) {
    let t = types[&v];
    let lane = if t.len == 1 { 0 } else { k };
    let size = t.elem.size();
    mark_range(live, types, v, lane * size, size);
}

/// Drops `simd_if` regions with empty bodies.
fn drop_empty_regions(m: &mut Module) -> usize {
    let mut removed = 0;
    loop {
        let ins = &m.insts;
        let mut kill = None;
        for k in 0..ins.len() {
            if !matches!(ins[k].op, Op::SimdIf(_)) {
                continue;
            }
            let next = |j: usize| ins.get(j).map(|i| &i.op);
            match (next(k + 1), next(k + 2)) {
                (Some(Op::SimdEnd), _) => kill = Some((k, 2)),
                (Some(Op::SimdElse), Some(Op::SimdEnd)) => kill = Some((k, 3)),
                _ => continue,
            }
            break;
        }
        match kill {
            Some((k, n)) => {
                m.insts.drain(k..k + n);
                removed += n;
            }
            None => return removed,
        }
    }
}

/// Removes instructions none of whose defined elements are used.
///
/// Liveness is tracked per byte, backward from memory writes, atomics and
/// control flow. A region write none of whose written bytes are live is
/// replaced by its old value.
pub fn remove_dead_vectors(m: &Module) -> (Module, usize) {
    let mut out = m.clone();
    let mut removed = drop_empty_regions(&mut out);
    let Ok(tree) = out.scopes() else { return (out, removed) };
    let types = out.types();
    let mut live: HashMap<ValueId, Live> = HashMap::new();
    let mut dead: HashSet<ValueId> = HashSet::new();
    let mut bypass: HashMap<ValueId, ValueId> = HashMap::new();
    for (k, inst) in out.insts.iter().enumerate().rev() {
        let id = inst.id;
        if inst.op.has_side_effects() || inst.op.is_marker() {
            for v in inst.op.operands() {
                mark_all(&mut live, &types, v);
            }
            continue;
        }
        let Some(ty) = inst.ty else { continue };
        let l = live.remove(&id).unwrap_or_else(|| vec![false; ty.bytes()]);
        if !l.iter().any(|&b| b) {
            if let Op::WrRegion { old, .. } = &inst.op {
                bypass.insert(id, *old);
            }
            dead.insert(id);
            continue;
        }
        let size = ty.elem.size();
        match &inst.op {
            Op::RdRegion { src, region } => {
                for lane in 0..region.len as usize {
                    if lane_live(&l, lane, size) {
                        let b = region.byte_offset(lane as u32, size) as usize;
                        mark_range(&mut live, &types, *src, b, size);
                    }
                }
            }
            Op::WrRegion { old, new, region, pred } => {
                let nsz = types[new].elem.size();
                let mut written = vec![false; l.len()];
                let mut any = false;
                for lane in 0..region.len as usize {
                    let b = region.byte_offset(lane as u32, nsz) as usize;
                    written[b..b + nsz].iter_mut().for_each(|x| *x = true);
                    if l[b..b + nsz].iter().any(|&x| x) {
                        any = true;
                        mark_lane(&mut live, &types, *new, lane);
                        if let Some(p) = pred {
                            mark_lane(&mut live, &types, *p, lane);
                        }
                    }
                }
                if !any {
                    bypass.insert(id, *old);
                    dead.insert(id);
                }
                // The old value shows through wherever the write may not happen.
                let certain = !any || (tree.inst_scope[k] == 0 && pred.is_none());
                for (b, &x) in l.iter().enumerate() {
                    if x && !(certain && any && written[b]) {
                        mark_range(&mut live, &types, *old, b, 1);
                    }
                }
            }
            Op::Binary(_, a, b) | Op::Cmp(_, a, b) => {
                for lane in (0..ty.len as usize).filter(|&j| lane_live(&l, j, size)) {
                    mark_lane(&mut live, &types, *a, lane);
                    mark_lane(&mut live, &types, *b, lane);
                }
            }
            Op::Sel(c, a, b) => {
                for lane in (0..ty.len as usize).filter(|&j| lane_live(&l, j, size)) {
                    for v in [c, a, b] {
                        mark_lane(&mut live, &types, *v, lane);
                    }
                }
            }
            Op::Mov(a) => {
                for lane in (0..ty.len as usize).filter(|&j| lane_live(&l, j, size)) {
                    mark_lane(&mut live, &types, *a, lane);
                }
            }
            op => {
                for v in op.operands() {
                    mark_all(&mut live, &types, v);
                }
            }
        }
    }
    let resolve = |mut v: ValueId| {
        while let Some(&n) = bypass.get(&v) {
            v = n;
        }
        v
    };
    let mut referenced = HashSet::new();
    for inst in &mut out.insts {
        if !dead.contains(&inst.id) {
            inst.op.map_operands(resolve);
            referenced.extend(inst.op.operands());
        }
    }
    // A dead value can still be the old operand of a write that covers all
    // of its live bytes; none of its elements are observed, so zero will do.
    for inst in &mut out.insts {
        if dead.contains(&inst.id) && referenced.contains(&inst.id) {
            dead.remove(&inst.id);
            if !matches!(inst.op, Op::Const(_)) {
                let t = inst.ty.unwrap();
                inst.op = Op::Const(Vector::zeroed(t.elem, t.len as usize));
                removed += 1;
            }
        }
    }
    removed += dead.len();
    out.insts.retain(|i| !dead.contains(&i.id));
    (out, removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{verify, Builder, Param};
    use crate::opt::testutil::assert_equivalent;
    use crate::region::Region;
    use crate::types::{BinOp, ElemType};

    fn setup() -> (Builder, ValueId, ValueId) {
        let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
        let off = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: off }, ElemType::D, 8);
        (b, off, x)
    }

    #[test]
    fn unread_values_are_removed() {
        let (mut b, off, x) = setup();
        let w = b.value(Op::WrRegion { old: x, new: x, region: Region::identity(8), pred: None }, ElemType::D, 8);
        b.value(Op::Binary(BinOp::Add, w, w), ElemType::D, 8);
        b.effect(Op::OwordWrite { surf: 0, offset: off, data: x });
        let (m, n) = remove_dead_vectors(&b.finish());
        assert_eq!(n, 2);
        assert_eq!(m.insts.len(), 3);
    }

    #[test]
    fn covered_write_is_removed() {
        // 8 lanes: first write fills lanes 0..3, the second overwrites all 8
        // before anything reads the vector.
        let (mut b, off, x) = setup();
        let z = b.konst(Vector::zeroed(ElemType::D, 8));
        let four = b.value(Op::RdRegion { src: x, region: Region::new(0, 4, 1, 0, 4) }, ElemType::D, 4);
        let w1 = b.value(Op::WrRegion { old: z, new: four, region: Region::new(0, 4, 1, 0, 4), pred: None }, ElemType::D, 8);
        let dbl = b.value(Op::Binary(BinOp::Add, x, x), ElemType::D, 8);
        let w2 = b.value(Op::WrRegion { old: w1, new: dbl, region: Region::identity(8), pred: None }, ElemType::D, 8);
        b.effect(Op::OwordWrite { surf: 0, offset: off, data: w2 });
        let before = b.finish();
        let (m, _) = remove_dead_vectors(&before);
        assert!(!m.insts.iter().any(|i| i.id == w1 || i.id == four));
        assert_equivalent(&before, &m, 5);
    }

    #[test]
    fn partial_reads_keep_only_live_writes() {
        let (mut b, off, x) = setup();
        let lo = b.value(Op::RdRegion { src: x, region: Region::new(0, 4, 1, 0, 4) }, ElemType::D, 4);
        let hi = b.value(Op::RdRegion { src: x, region: Region::new(0, 4, 1, 16, 4) }, ElemType::D, 4);
        let w1 = b.value(Op::WrRegion { old: x, new: hi, region: Region::new(0, 4, 1, 0, 4), pred: None }, ElemType::D, 8);
        let w2 = b.value(Op::WrRegion { old: w1, new: lo, region: Region::new(0, 4, 1, 16, 4), pred: None }, ElemType::D, 8);
        let r = b.value(Op::RdRegion { src: w2, region: Region::new(0, 4, 1, 16, 4) }, ElemType::D, 4);
        let zero = b.konst(Vector::zeroed(ElemType::D, 8));
        let w3 = b.value(Op::WrRegion { old: zero, new: r, region: Region::new(0, 4, 1, 0, 4), pred: None }, ElemType::D, 8);
        b.effect(Op::OwordWrite { surf: 0, offset: off, data: w3 });
        let before = b.finish();
        let (m, _) = remove_dead_vectors(&before);
        // only the upper half of w2 is read, so w1 (lower half) is dead
        assert!(!m.insts.iter().any(|i| i.id == w1 || i.id == hi));
        assert!(m.insts.iter().any(|i| i.id == w2));
        assert_equivalent(&before, &m, 5);
    }

    #[test]
    fn side_effects_and_their_inputs_stay() {
        let (mut b, off, x) = setup();
        let one = b.konst(Vector::from_i64s(ElemType::D, &[1]));
        let y = b.value(Op::Binary(BinOp::Add, x, one), ElemType::D, 8);
        b.effect(Op::MediaWrite { surf: 0, x: off, y: off, rows: 1, data: y });
        let o = b.konst(Vector::from_i64s(ElemType::D, &[0; 8]));
        b.value(Op::Atomic { op: crate::memory::AtomicOp::Inc, surf: 0, offsets: o, src0: None, src1: None }, ElemType::Ud, 8);
        let before = b.finish();
        let (m, n) = remove_dead_vectors(&before);
        assert_eq!(n, 0);
        assert_eq!(m, before);
    }

    #[test]
    fn empty_regions_disappear() {
        let (mut b, off, x) = setup();
        b.effect(Op::SimdIf(x));
        b.effect(Op::SimdElse);
        b.effect(Op::SimdEnd);
        b.effect(Op::OwordWrite { surf: 0, offset: off, data: x });
        let (m, _) = remove_dead_vectors(&b.finish());
        verify(&m).unwrap();
        assert_eq!(m.insts.len(), 3);
    }
}
