use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::{exec_len, verify, Module, Op, Param, Ty, ValueId, VerifyError};
use crate::dispatch::{DispatchSpec, MaskStack};
use crate::memory::{self, MemError, Surface};
use crate::region::{rdregion_eval, wrregion_eval, RegionError};
use crate::types::{binop, compare, convert, ElemType, Num, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid module: {0}")]
    Verify(#[from] VerifyError),
    #[error("no surface bound for parameter `{0}`")]
    MissingSurface(String),
    #[error("no value for scalar argument `{0}`")]
    MissingArg(String),
    #[error("thread ({x},{y}) {inst}: {err}")]
    Mem { x: u32, y: u32, inst: ValueId, err: MemError },
    #[error("thread ({x},{y}) {inst}: {err}")]
    Region { x: u32, y: u32, inst: ValueId, err: RegionError },
    #[error("thread ({x},{y}) {inst}: lane {lane} index {index} is outside the {len}-element source")]
    Index { x: u32, y: u32, inst: ValueId, lane: usize, index: i64, len: usize },
}

fn lane(v: &Vector, k: usize) -> Num {
    if v.len() == 1 {
        v.get(0)
    } else {
        v.get(k)
    }
}

fn flags(v: &Vector) -> Vec<bool> {
    v.nums().into_iter().map(Num::is_nonzero).collect()
}

/// Lane-independent operations. They compute every lane whatever the
/// execution mask, so constant folding may evaluate them ahead of time.
pub(crate) fn eval_pure<'a>(
    op: &Op,
    ty: Ty,
    v: impl Fn(&ValueId) -> &'a Vector,
) -> Option<Result<Vector, RegionError>> {
    let n = ty.len as usize;
    match op {
        Op::Binary(op, a, b) => {
            let (a, b) = (v(a), v(b));
            let nums: Vec<Num> = (0..n)
                .map(|k| binop(*op, ty.elem, lane(a, k), lane(b, k)).expect("verified operand types"))
                .collect();
            Some(Ok(Vector::from_nums(ty.elem, &nums)))
        }
        Op::Cmp(rel, a, b) => {
            let (a, b) = (v(a), v(b));
            let vals: Vec<i64> = (0..n).map(|k| compare(*rel, lane(a, k), lane(b, k)) as i64).collect();
            Some(Ok(Vector::from_i64s(ElemType::Uw, &vals)))
        }
        Op::Sel(mask, a, b) => {
            let (mk, a, b) = (v(mask), v(a), v(b));
            let nums: Vec<Num> =
                (0..n).map(|k| if lane(mk, k).is_nonzero() { lane(a, k) } else { lane(b, k) }).collect();
            Some(Ok(Vector::from_nums(ty.elem, &nums)))
        }
        Op::Mov(a) => {
            let a = v(a);
            let nums: Vec<Num> = (0..n).map(|k| convert(lane(a, k), ty.elem)).collect();
            Some(Ok(Vector::from_nums(ty.elem, &nums)))
        }
        Op::RdRegion { src, region } => Some(rdregion_eval(v(src), region, ty.elem)),
        _ => None,
    }
}

/// Executes one thread of `m` against `surfaces` (by parameter name).
pub fn eval_module(
    m: &Module,
    surfaces: &mut BTreeMap<String, Surface>,
    args: &BTreeMap<String, Num>,
    thread: (u32, u32),
) -> Result<(), EvalError> {
    verify(m)?;
    run(m, surfaces, args, thread)
}

/// Runs every thread of the grid in dispatch order and returns the final
/// surfaces.
pub fn eval_dispatch(m: &Module, spec: &DispatchSpec) -> Result<BTreeMap<String, Surface>, EvalError> {
    verify(m)?;
    let mut surfaces = spec.surfaces.clone();
    for t in spec.threads() {
        run(m, &mut surfaces, &spec.args, t)?;
    }
    Ok(surfaces)
}

fn run(
    m: &Module,
    surfaces: &mut BTreeMap<String, Surface>,
    args: &BTreeMap<String, Num>,
    (tx, ty_): (u32, u32),
) -> Result<(), EvalError> {
    for p in &m.params {
        match p {
            Param::Surface { name } if !surfaces.contains_key(name) => {
                return Err(EvalError::MissingSurface(name.clone()))
            }
            Param::Scalar { name, .. } if !args.contains_key(name) => {
                return Err(EvalError::MissingArg(name.clone()))
            }
            _ => {}
        }
    }
    let types = m.types();
    let mut vals: HashMap<ValueId, Vector> = HashMap::with_capacity(m.insts.len());
    let mut masks = MaskStack::new();
    for inst in &m.insts {
        let id = inst.id;
        let mem_err = |err| EvalError::Mem { x: tx, y: ty_, inst: id, err };
        let reg_err = |err| EvalError::Region { x: tx, y: ty_, inst: id, err };
        let v = |x: &ValueId| &vals[x];
        let ty = inst.ty.unwrap_or(Ty::new(ElemType::Ud, 0));
        let n = ty.len as usize;
        let surf_name = |s: &u32| m.params[*s as usize].name().to_string();

        match &inst.op {
            Op::SimdIf(c) => {
                let c = flags(v(c));
                if masks.active() {
                    masks.begin(&c);
                } else {
                    masks.begin(&[false]);
                }
                continue;
            }
            Op::SimdElse => {
                masks.flip();
                continue;
            }
            Op::SimdEnd => {
                masks.end();
                continue;
            }
            _ => {}
        }

        if !masks.active() {
            // Skipped region: writes leave their target unchanged, other
            // values are never observed outside the region.
            if let Some(t) = inst.ty {
                let out = match &inst.op {
                    Op::WrRegion { old, .. } => v(old).clone(),
                    _ => Vector::zeroed(t.elem, t.len as usize),
                };
                vals.insert(id, out);
            }
            continue;
        }

        let lanes = masks.lanes(exec_len(&inst.op, inst.ty, &types));
        let result: Option<Vector> = match &inst.op {
            Op::Const(c) => Some(c.clone()),
            Op::Arg(i) => {
                let name = m.params[*i as usize].name();
                Some(Vector::from_nums(ty.elem, &[args[name]]))
            }
            Op::ThreadX => Some(Vector::from_i64s(ty.elem, &[tx as i64])),
            Op::ThreadY => Some(Vector::from_i64s(ty.elem, &[ty_ as i64])),
            Op::Binary(..) | Op::Cmp(..) | Op::Sel(..) | Op::Mov(_) | Op::RdRegion { .. } => {
                Some(eval_pure(&inst.op, ty, v).expect("pure op").map_err(reg_err)?)
            }
            Op::Any(a) | Op::All(a) => {
                let f = flags(v(a));
                let en = if lanes.len() == f.len() { lanes.clone() } else { vec![true; f.len()] };
                let mut it = f.iter().zip(&en).filter(|(_, &e)| e).map(|(&x, _)| x);
                let r = if matches!(inst.op, Op::Any(_)) { it.any(|x| x) } else { it.all(|x| x) };
                Some(Vector::from_i64s(ElemType::Uw, &[r as i64]))
            }
            Op::WrRegion { old, new, region, pred } => {
                let mut en = lanes.clone();
                if let Some(p) = pred {
                    for (e, f) in en.iter_mut().zip(flags(v(p))) {
                        *e &= f;
                    }
                }
                let all = en.iter().all(|&e| e);
                let p = if all { None } else { Some(en.as_slice()) };
                Some(wrregion_eval(v(old), v(new), region, p).map_err(reg_err)?)
            }
            Op::ISelect { src, idx } => {
                let (src, idx) = (v(src), v(idx));
                let mut out = Vector::zeroed(ty.elem, n);
                for k in 0..n {
                    if !lanes[k] {
                        continue;
                    }
                    let i = idx.get(k).as_i64();
                    if i < 0 || i as usize >= src.len() {
                        return Err(EvalError::Index { x: tx, y: ty_, inst: id, lane: k, index: i, len: src.len() });
                    }
                    out.set(k, src.get(i as usize));
                }
                Some(out)
            }
            Op::MediaRead { surf, x, y, rows } => {
                let s = &surfaces[&surf_name(surf)];
                let w = ty.bytes() / *rows as usize;
                let bytes = memory::media_block_read(
                    s,
                    v(x).get(0).as_i64(),
                    v(y).get(0).as_i64(),
                    w,
                    *rows as usize,
                )
                .map_err(mem_err)?;
                Some(Vector { ty: ty.elem, bytes })
            }
            Op::MediaWrite { surf, x, y, rows, data } => {
                let s = surfaces.get_mut(&surf_name(surf)).unwrap();
                let d = v(data);
                let w = d.bytes.len() / *rows as usize;
                memory::media_block_write(s, v(x).get(0).as_i64(), v(y).get(0).as_i64(), w, *rows as usize, &d.bytes)
                    .map_err(mem_err)?;
                None
            }
            Op::OwordRead { surf, offset } => {
                let s = &surfaces[&surf_name(surf)];
                let base = v(offset).get(0).as_i64();
                let mut bytes = Vec::with_capacity(ty.bytes());
                for (off, len) in oword_chunks(ty.bytes()) {
                    bytes.extend(memory::oword_read(s, base + off as i64, len).map_err(mem_err)?);
                }
                Some(Vector { ty: ty.elem, bytes })
            }
            Op::OwordWrite { surf, offset, data } => {
                let s = surfaces.get_mut(&surf_name(surf)).unwrap();
                let base = v(offset).get(0).as_i64();
                let d = v(data);
                for (off, len) in oword_chunks(d.bytes.len()) {
                    memory::oword_write(s, base + off as i64, &d.bytes[off..off + len]).map_err(mem_err)?;
                }
                None
            }
            Op::ScatterRead { surf, global, offsets } => {
                let s = &surfaces[&surf_name(surf)];
                let offs: Vec<i64> = v(offsets).nums().into_iter().map(Num::as_i64).collect();
                let bytes =
                    memory::scatter_read(s, v(global).get(0).as_i64(), &offs, ty.elem.size(), &lanes)
                        .map_err(mem_err)?;
                Some(Vector { ty: ty.elem, bytes })
            }
            Op::ScatterWrite { surf, global, offsets, data } => {
                let offs: Vec<i64> = v(offsets).nums().into_iter().map(Num::as_i64).collect();
                let d = v(data).clone();
                let g = v(global).get(0).as_i64();
                let s = surfaces.get_mut(&surf_name(surf)).unwrap();
                memory::scatter_write(s, g, &offs, d.ty.size(), &d.bytes, &lanes).map_err(mem_err)?;
                None
            }
            Op::Atomic { op, surf, offsets, src0, src1 } => {
                let offs: Vec<i64> = v(offsets).nums().into_iter().map(Num::as_i64).collect();
                let words = |s: &Option<ValueId>| -> Vec<u32> {
                    s.map(|s| v(&s).nums().into_iter().map(|x| x.as_i64() as u32).collect()).unwrap_or_default()
                };
                let (a, b) = (words(src0), words(src1));
                let s = surfaces.get_mut(&surf_name(surf)).unwrap();
                let old = memory::atomic(s, *op, &offs, &a, &b, &lanes).map_err(mem_err)?;
                let old: Vec<i64> = old.into_iter().map(|x| x as i64).collect();
                Some(Vector::from_i64s(ElemType::Ud, &old))
            }
            Op::SimdIf(_) | Op::SimdElse | Op::SimdEnd => unreachable!(),
        };
        if let Some(r) = result {
            vals.insert(id, r);
        }
    }
    Ok(())
}

/// Splits an oword block of `n` bytes into legal transfers (largest first).
pub(crate) fn oword_chunks(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut off = 0;
    while off < n {
        let len = [128, 64, 32, 16].into_iter().find(|&l| l <= n - off).unwrap_or(16);
        out.push((off, len));
        off += len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Builder;
    use crate::memory::AtomicOp;
    use crate::region::Region;
    use crate::types::{BinOp, CmpRel};

    fn buffer_spec(bytes: Vec<u8>) -> DispatchSpec {
        DispatchSpec::new(1, 1).surface("buf", Surface::buffer(bytes))
    }

    fn dwords(s: &Surface) -> Vec<i32> {
        s.bytes().chunks(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()
    }

    #[test]
    fn read_modify_write_buffer() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "buf".into() }]);
        let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::D, 8);
        let r = b.value(Op::RdRegion { src: x, region: Region::new(0, 4, 2, 4, 4) }, ElemType::D, 4);
        let two = b.konst(Vector::from_i64s(ElemType::D, &[2]));
        let d = b.value(Op::Binary(BinOp::Mul, r, two), ElemType::D, 4);
        let w = b.value(Op::WrRegion { old: x, new: d, region: Region::new(0, 4, 2, 0, 4), pred: None }, ElemType::D, 8);
        b.effect(Op::OwordWrite { surf: 0, offset: z, data: w });
        let bytes: Vec<u8> = (0..8i32).flat_map(|k| k.to_le_bytes()).collect();
        let out = eval_dispatch(&b.finish(), &buffer_spec(bytes)).unwrap();
        assert_eq!(dwords(&out["buf"]), vec![2, 1, 6, 3, 10, 5, 14, 7]);
    }

    // then/else under complementary masks; outer value written per lane
    #[test]
    fn simd_if_else_masks() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "buf".into() }]);
        let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::D, 8);
        let c = b.value(Op::Cmp(CmpRel::Gt, x, z), ElemType::Uw, 8);
        b.effect(Op::SimdIf(c));
        let one = b.konst(Vector::splat(ElemType::D, Num::Int(1), 8));
        let w1 = b.value(Op::WrRegion { old: x, new: one, region: Region::identity(8), pred: None }, ElemType::D, 8);
        b.effect(Op::SimdElse);
        let m1 = b.konst(Vector::splat(ElemType::D, Num::Int(-1), 8));
        let w2 = b.value(Op::WrRegion { old: w1, new: m1, region: Region::identity(8), pred: None }, ElemType::D, 8);
        b.effect(Op::SimdEnd);
        b.effect(Op::OwordWrite { surf: 0, offset: z, data: w2 });
        let bytes: Vec<u8> = [5i32, -3, 0, 7, -1, 2, 0, 9].iter().flat_map(|k| k.to_le_bytes()).collect();
        let out = eval_dispatch(&b.finish(), &buffer_spec(bytes)).unwrap();
        assert_eq!(dwords(&out["buf"]), vec![1, -1, -1, 1, -1, 1, -1, 1]);
    }

    #[test]
    fn skipped_region_keeps_old_value() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "buf".into() }]);
        let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::D, 4);
        let c = b.value(Op::Cmp(CmpRel::Lt, x, z), ElemType::Uw, 4);
        b.effect(Op::SimdIf(c));
        let k = b.konst(Vector::splat(ElemType::D, Num::Int(42), 4));
        let w = b.value(Op::WrRegion { old: x, new: k, region: Region::identity(4), pred: None }, ElemType::D, 4);
        b.effect(Op::SimdEnd);
        b.effect(Op::OwordWrite { surf: 0, offset: z, data: w });
        let bytes: Vec<u8> = [1i32, 2, 3, 4].iter().flat_map(|k| k.to_le_bytes()).collect();
        let out = eval_dispatch(&b.finish(), &buffer_spec(bytes)).unwrap();
        assert_eq!(dwords(&out["buf"]), vec![1, 2, 3, 4]);
    }

    #[test]
    fn atomic_inc_same_address() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "buf".into() }]);
        let offs = b.konst(Vector::zeroed(ElemType::D, 16));
        let old = b.value(
            Op::Atomic { op: AtomicOp::Inc, surf: 0, offsets: offs, src0: None, src1: None },
            ElemType::Ud,
            16,
        );
        let four = b.konst(Vector::from_i64s(ElemType::D, &[4]));
        let iota = b.konst(Vector::from_i64s(ElemType::D, &(0..16).map(|k| k * 4).collect::<Vec<_>>()));
        let off2 = b.value(Op::Binary(BinOp::Add, iota, four), ElemType::D, 16);
        let g = b.konst(Vector::from_i64s(ElemType::D, &[0]));
        b.effect(Op::ScatterWrite { surf: 0, global: g, offsets: off2, data: old });
        let out = eval_dispatch(&b.finish(), &buffer_spec(vec![0; 17 * 4])).unwrap();
        let d = dwords(&out["buf"]);
        assert_eq!(d[0], 16);
        assert_eq!(&d[1..], (0..16).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn iselect_bounds_fault() {
        let mut b = Builder::new("k", vec![]);
        let src = b.konst(Vector::from_i64s(ElemType::D, &[1, 2, 3, 4]));
        let idx = b.konst(Vector::from_i64s(ElemType::Uw, &[0, 4]));
        b.value(Op::ISelect { src, idx }, ElemType::D, 2);
        let err = eval_dispatch(&b.finish(), &DispatchSpec::new(1, 1)).unwrap_err();
        assert!(matches!(err, EvalError::Index { lane: 1, index: 4, .. }));
    }

    #[test]
    fn oword_chunking() {
        assert_eq!(oword_chunks(1024).len(), 8);
        assert_eq!(oword_chunks(48), vec![(0, 32), (32, 16)]);
    }
}
