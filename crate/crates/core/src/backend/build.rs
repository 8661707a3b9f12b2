//! Turns baled IR into virtual instructions over unallocated registers.

use std::collections::{BTreeSet, HashMap, HashSet};

use super::bale::{BaleMap, Fold};
use super::{natural_align, Mode, TempInfo, VDst, VInst, VReg, VSrc};
use crate::ir::{Module, Op, ScopeTree, Ty, ValueId};
use crate::region::Region;
use crate::types::{CmpRel, ElemType, Num};
use crate::visa::{MachineConfig, Opcode, THREAD_X_ADDR, THREAD_Y_ADDR};

/// A `wrregion` root whose destination must start out holding `old`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct WrInfo {
    pub w: ValueId,
    pub old: ValueId,
    pub idx: usize,
}

pub(crate) struct Lowered {
    pub insts: Vec<VInst>,
    pub wrs: Vec<WrInfo>,
    pub temps: Vec<TempInfo>,
    /// Values used as message payloads; these are register aligned.
    pub payload: HashSet<ValueId>,
    pub tree: ScopeTree,
    pub defs: HashMap<ValueId, usize>,
    pub types: HashMap<ValueId, Ty>,
    pub bales: usize,
    pub promoted: usize,
}

impl Lowered {
    pub fn new_temp(&mut self, bytes: u32, align: u32) -> VReg {
        self.temps.push(TempInfo { bytes, align });
        VReg::Temp(self.temps.len() as u32 - 1)
    }
}

struct Ctx<'a> {
    m: &'a Module,
    bales: &'a BaleMap,
    arg_addrs: &'a [Option<u32>],
    cfg: &'a MachineConfig,
    out: Lowered,
    reg_consts: BTreeSet<ValueId>,
    uses: HashMap<ValueId, usize>,
    pos: u32,
}

fn identity(len: u32, esz: usize) -> Vec<u32> {
    (0..len).map(|k| k * esz as u32).collect()
}

fn ud(n: u32) -> VSrc {
    VSrc::Imm(Num::Int(n as i64), ElemType::Ud)
}

pub(crate) fn lower(
    m: &Module,
    bales: &BaleMap,
    arg_addrs: &[Option<u32>],
    cfg: &MachineConfig,
) -> Result<Lowered, String> {
    let tree = m.scopes().map_err(|e| e.to_string())?;
    let out = Lowered {
        insts: Vec::new(),
        wrs: Vec::new(),
        temps: Vec::new(),
        payload: HashSet::new(),
        tree,
        defs: m.positions(),
        types: m.types(),
        bales: 0,
        promoted: 0,
    };
    let mut cx = Ctx { m, bales, arg_addrs, cfg, out, reg_consts: BTreeSet::new(), uses: m.use_counts(), pos: 0 };
    let mut ifs: Vec<(u32, Mode)> = Vec::new();
    for (idx, inst) in m.insts.iter().enumerate() {
        cx.pos = 2 * idx as u32 + 1;
        if !bales.is_root(inst.id) {
            continue;
        }
        match &inst.op {
            Op::SimdIf(c) => {
                let marker = cx.simd_if(*c);
                ifs.push(marker);
            }
            Op::SimdElse | Op::SimdEnd => {
                let (lanes, mode) = *ifs.last().ok_or("unbalanced simd_else/simd_end")?;
                if matches!(inst.op, Op::SimdEnd) {
                    ifs.pop();
                }
                let op = if matches!(inst.op, Op::SimdElse) { Opcode::SimdElse } else { Opcode::SimdEnd };
                cx.push(op, lanes, mode, None, vec![], None, true);
            }
            _ => cx.root(idx, inst.id, &inst.op)?,
        }
    }
    for c in std::mem::take(&mut cx.reg_consts) {
        cx.const_init(c);
    }
    cx.out.insts.sort_by_key(|i| i.pos);
    Ok(cx.out)
}

impl Ctx<'_> {
    fn op_of(&self, v: ValueId) -> &Op {
        &self.m.insts[self.out.defs[&v]].op
    }

    fn ty(&self, v: ValueId) -> Ty {
        self.out.types[&v]
    }

    fn mode_for(&self, idx: usize, exec_len: u32) -> Mode {
        let s = self.out.tree.inst_scope[idx];
        if self.out.tree.is_masked(s, exec_len) {
            Mode::Masked
        } else if self.out.tree.scopes[s].mask_len.is_none() {
            Mode::Top
        } else {
            Mode::NoMask
        }
    }

    fn temp(&mut self, bytes: u32) -> VReg {
        let align = natural_align(bytes, self.cfg.grf_bytes);
        self.out.new_temp(bytes, align)
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, op: Opcode, lanes: u32, mode: Mode, dst: Option<VDst>, srcs: Vec<VSrc>, pred: Option<VSrc>, block: bool) {
        self.out.insts.push(VInst { op, lanes, mode, dst, srcs, pred, pos: self.pos, block });
    }

    /// The register holding `v` and its element type.
    fn reg(&mut self, v: ValueId) -> (VReg, ElemType) {
        let elem = self.ty(v).elem;
        match *self.op_of(v) {
            Op::Arg(i) => (VReg::Fixed(self.arg_addrs[i as usize].expect("scalar argument")), elem),
            Op::ThreadX => (VReg::Fixed(THREAD_X_ADDR), elem),
            Op::ThreadY => (VReg::Fixed(THREAD_Y_ADDR), elem),
            Op::Const(_) => {
                self.reg_consts.insert(v);
                (VReg::Val(v), elem)
            }
            _ => (VReg::Val(v), elem),
        }
    }

    fn whole(&mut self, v: ValueId) -> VSrc {
        let t = self.ty(v);
        let (reg, ty) = self.reg(v);
        VSrc::Reg { reg, ty, offs: identity(t.len, t.elem.size()), baled: false }
    }

    /// Source operand for `v`, folding regions and conversions.
    fn src(&mut self, v: ValueId) -> VSrc {
        match self.op_of(v).clone() {
            Op::Const(c) if c.is_splat() => VSrc::Imm(c.get(0), c.ty),
            Op::RdRegion { src, region } if self.bales.fold(v) == Some(Fold::Region) => {
                self.region_src(src, &region, self.ty(v))
            }
            Op::Mov(x) if self.bales.fold(v) == Some(Fold::Convert) => self.src(x),
            _ => self.whole(v),
        }
    }

    fn region_src(&mut self, src: ValueId, region: &Region, t: Ty) -> VSrc {
        if let Op::Const(c) = self.op_of(src) {
            if c.is_splat() && c.ty == t.elem {
                return VSrc::Imm(c.get(0), c.ty);
            }
        }
        let (reg, map) = self.byte_map(src);
        let esz = t.elem.size();
        let offs = (0..t.len).map(|k| map[region.byte_offset(k, esz) as usize]).collect();
        VSrc::Reg { reg, ty: t.elem, offs, baled: true }
    }

    /// Register holding the bytes of `v` and where each byte lives in it.
    fn byte_map(&mut self, v: ValueId) -> (VReg, Vec<u32>) {
        if self.bales.fold(v) == Some(Fold::Region) {
            if let Op::RdRegion { src, region } = self.op_of(v).clone() {
                let (reg, inner) = self.byte_map(src);
                let t = self.ty(v);
                let esz = t.elem.size();
                let map = (0..t.bytes() as u32)
                    .map(|b| {
                        let e = b / esz as u32;
                        inner[(region.byte_offset(e, esz) + (b % esz as u32) as i64) as usize]
                    })
                    .collect();
                return (reg, map);
            }
        }
        let bytes = self.ty(v).bytes() as u32;
        (self.reg(v).0, (0..bytes).collect())
    }

    /// Emits a computation, widening byte arithmetic to words.
    #[allow(clippy::too_many_arguments)]
    fn compute(&mut self, op: Opcode, lanes: u32, mode: Mode, dst: VDst, srcs: Vec<VSrc>, pred: Option<VSrc>) {
        if matches!(op, Opcode::Bin(_)) && dst.ty.size() == 1 {
            self.out.promoted += 1;
            let t = self.temp(lanes * 2);
            let wide = VDst { reg: t, ty: ElemType::W, offs: identity(lanes, 2) };
            self.push(op, lanes, mode, Some(wide), srcs, None, false);
            let back = VSrc::Reg { reg: t, ty: ElemType::W, offs: identity(lanes, 2), baled: false };
            self.push(Opcode::Mov, lanes, mode, Some(dst), vec![back], pred, false);
        } else {
            self.push(op, lanes, mode, Some(dst), srcs, pred, false);
        }
    }

    fn main_op(&mut self, op: &Op, lanes: u32, mode: Mode, dst: VDst, pred: Option<VSrc>) {
        match *op {
            Op::Binary(b, x, y) => {
                let srcs = vec![self.src(x), self.src(y)];
                self.compute(Opcode::Bin(b), lanes, mode, dst, srcs, pred);
            }
            Op::Cmp(rel, x, y) => {
                let srcs = vec![self.src(x), self.src(y)];
                self.compute(Opcode::Cmp(rel), lanes, mode, dst, srcs, pred);
            }
            Op::Sel(c, x, y) => {
                let srcs = vec![self.src(c), self.src(x), self.src(y)];
                self.compute(Opcode::Sel, lanes, mode, dst, srcs, pred);
            }
            Op::Mov(x) => {
                let srcs = vec![self.src(x)];
                self.compute(Opcode::Mov, lanes, mode, dst, srcs, pred);
            }
            _ => unreachable!("not a main op"),
        }
    }

    fn own_dst(&self, v: ValueId) -> VDst {
        let t = self.ty(v);
        VDst { reg: VReg::Val(v), ty: t.elem, offs: identity(t.len, t.elem.size()) }
    }

    /// Gives inactive lanes of a masked result a defined zero.
    fn zero_fill(&mut self, v: ValueId, mode: Mode) {
        if mode == Mode::Masked && self.uses.get(&v).copied().unwrap_or(0) > 0 {
            let t = self.ty(v);
            let d = self.own_dst(v);
            self.push(Opcode::Mov, t.len, Mode::NoMask, Some(d), vec![VSrc::Imm(Num::Int(0), t.elem)], None, false);
        }
    }

    fn root(&mut self, idx: usize, v: ValueId, op: &Op) -> Result<(), String> {
        let lanes_of = |cx: &Self, x: ValueId| cx.ty(x).len;
        match op {
            Op::Const(_) | Op::Arg(_) | Op::ThreadX | Op::ThreadY => return Ok(()),
            Op::Binary(..) | Op::Cmp(..) | Op::Sel(..) | Op::Mov(_) => {
                let t = self.ty(v);
                let mode = self.mode_for(idx, t.len);
                let dst = self.own_dst(v);
                self.main_op(op, t.len, mode, dst, None);
            }
            Op::RdRegion { src, region } => {
                let t = self.ty(v);
                let mode = self.mode_for(idx, t.len);
                let s = self.region_src(*src, region, t);
                let dst = self.own_dst(v);
                self.push(Opcode::Mov, t.len, mode, Some(dst), vec![s], None, false);
            }
            Op::WrRegion { old, new, region, pred } => {
                let tn = self.ty(*new);
                let esz = tn.elem.size();
                let offs = (0..tn.len).map(|k| region.byte_offset(k, esz) as u32).collect();
                let dst = VDst { reg: VReg::Val(v), ty: tn.elem, offs };
                let mode = self.mode_for(idx, tn.len);
                let pred = pred.map(|p| self.src(p));
                if self.bales.fold(*new) == Some(Fold::Main) {
                    let main = self.op_of(*new).clone();
                    self.main_op(&main, tn.len, mode, dst, pred);
                } else {
                    let s = self.src(*new);
                    self.push(Opcode::Mov, tn.len, mode, Some(dst), vec![s], pred, false);
                }
                self.reg(*old);
                self.out.wrs.push(WrInfo { w: v, old: *old, idx });
            }
            Op::Any(a) | Op::All(a) => {
                let n = lanes_of(self, *a);
                let mode = self.mode_for(idx, n);
                let s = self.src(*a);
                let dst = VDst { reg: VReg::Val(v), ty: self.ty(v).elem, offs: vec![0] };
                let opc = if matches!(op, Op::Any(_)) { Opcode::Any } else { Opcode::All };
                self.push(opc, n, mode, Some(dst), vec![s], None, false);
            }
            Op::ISelect { src, idx: ix } => {
                let t = self.ty(v);
                let mode = self.mode_for(idx, t.len);
                let (reg, ty) = self.reg(*src);
                let base = VSrc::Reg { reg, ty, offs: vec![0], baled: false };
                let i = self.src(*ix);
                let count = ud(lanes_of(self, *src));
                self.zero_fill(v, mode);
                let dst = self.own_dst(v);
                self.push(Opcode::ISelect, t.len, mode, Some(dst), vec![base, i, count], None, false);
            }
            Op::MediaRead { surf, x, y, rows } => self.media(v, *surf, *x, *y, *rows, None)?,
            Op::MediaWrite { surf, x, y, rows, data } => self.media(v, *surf, *x, *y, *rows, Some(*data))?,
            Op::OwordRead { surf, offset } => self.oword(v, *surf, *offset, None)?,
            Op::OwordWrite { surf, offset, data } => self.oword(v, *surf, *offset, Some(*data))?,
            Op::ScatterRead { surf, global, offsets } => {
                let t = self.ty(v);
                let mode = self.mode_for(idx, t.len);
                let srcs = vec![self.src(*global), self.src(*offsets)];
                self.zero_fill(v, mode);
                let dst = self.own_dst(v);
                self.push(Opcode::ScatterRead(*surf), t.len, mode, Some(dst), srcs, None, false);
            }
            Op::ScatterWrite { surf, global, offsets, data } => {
                let n = lanes_of(self, *offsets);
                let mode = self.mode_for(idx, n);
                let srcs = vec![self.src(*global), self.src(*offsets), self.src(*data)];
                self.push(Opcode::ScatterWrite(*surf), n, mode, None, srcs, None, false);
            }
            Op::Atomic { op: aop, surf, offsets, src0, src1 } => {
                let n = lanes_of(self, *offsets);
                let mode = self.mode_for(idx, n);
                let mut srcs = vec![self.src(*offsets)];
                for s in [src0, src1].into_iter().flatten() {
                    srcs.push(self.src(*s));
                }
                self.zero_fill(v, mode);
                let dst = self.own_dst(v);
                self.push(Opcode::Atomic(*aop, *surf), n, mode, Some(dst), srcs, None, false);
            }
            Op::SimdIf(_) | Op::SimdElse | Op::SimdEnd => unreachable!(),
        }
        self.out.bales += 1;
        Ok(())
    }

    fn simd_if(&mut self, c: ValueId) -> (u32, Mode) {
        let t = self.ty(c);
        let mode = if t.len > 1 { Mode::Masked } else { Mode::NoMask };
        let cond = if t.bytes() as u32 <= self.cfg.max_operand_bytes() {
            self.src(c)
        } else {
            let tmp = self.temp(t.len * 2);
            let d = VDst { reg: tmp, ty: ElemType::Uw, offs: identity(t.len, 2) };
            let srcs = vec![self.src(c), VSrc::Imm(Num::Int(0), t.elem)];
            self.push(Opcode::Cmp(CmpRel::Ne), t.len, Mode::NoMask, Some(d), srcs, None, false);
            VSrc::Reg { reg: tmp, ty: ElemType::Uw, offs: identity(t.len, 2), baled: false }
        };
        self.push(Opcode::SimdIf, t.len, mode, None, vec![cond], None, false);
        (t.len, mode)
    }

    /// Media block access, split by rows so each message payload fits.
    fn media(&mut self, v: ValueId, surf: u32, x: ValueId, y: ValueId, rows: u32, data: Option<ValueId>) -> Result<(), String> {
        let value = data.unwrap_or(v);
        let t = self.ty(value);
        let bytes = t.bytes() as u32;
        if rows == 0 || bytes % rows != 0 {
            return Err(format!("media block of {bytes} bytes does not divide into {rows} rows"));
        }
        let w = bytes / rows;
        if w > 64 || rows > 16 {
            return Err(format!("media block of {w}x{rows} bytes exceeds the 64x16 block limit"));
        }
        self.out.payload.insert(value);
        let (xs, ys) = (self.src(x), self.src(y));
        let (reg, ty) = self.reg(value);
        let max = self.cfg.max_operand_bytes();
        let mut r0 = 0;
        while r0 < rows {
            let fits = |r: u32| r * w <= max && self.cfg.grfs_touched(r0 * w, (r0 + r) * w) <= self.cfg.max_operand_grfs;
            let r = (1..=rows - r0).rev().find(|&r| fits(r)).unwrap_or(0);
            let staged = r == 0;
            let r = r.max(1);
            let (preg, poff) = if staged { (self.temp_payload(w), 0) } else { (reg, r0 * w) };
            let row_bytes = VDst { reg, ty: ElemType::Ub, offs: (r0 * w..(r0 + 1) * w).collect() };
            let tmp_bytes = |t: VReg| VSrc::Reg { reg: t, ty: ElemType::Ub, offs: (0..w).collect(), baled: false };
            let imms = [ud(w), ud(r), ud(r0)];
            match data {
                None => {
                    let d = VDst { reg: preg, ty, offs: vec![poff] };
                    let mut srcs = vec![xs.clone(), ys.clone()];
                    srcs.extend(imms);
                    self.push(Opcode::MediaRead(surf), 1, Mode::NoMask, Some(d), srcs, None, true);
                    if staged {
                        self.push(Opcode::Mov, w, Mode::NoMask, Some(row_bytes), vec![tmp_bytes(preg)], None, false);
                    }
                }
                Some(_) => {
                    if staged {
                        let d = VDst { reg: preg, ty: ElemType::Ub, offs: (0..w).collect() };
                        let s = VSrc::Reg { reg, ty: ElemType::Ub, offs: row_bytes.offs.clone(), baled: false };
                        self.push(Opcode::Mov, w, Mode::NoMask, Some(d), vec![s], None, false);
                    }
                    let mut srcs = vec![xs.clone(), ys.clone(), VSrc::Block { reg: preg, off: poff, ty }];
                    srcs.extend(imms);
                    self.push(Opcode::MediaWrite(surf), 1, Mode::NoMask, None, srcs, None, true);
                }
            }
            r0 += r;
        }
        self.out.bales += 1;
        Ok(())
    }

    fn temp_payload(&mut self, bytes: u32) -> VReg {
        let g = self.cfg.grf_bytes;
        self.out.new_temp(bytes, g)
    }

    /// Oword block access, split into pieces of at most two registers.
    fn oword(&mut self, v: ValueId, surf: u32, offset: ValueId, data: Option<ValueId>) -> Result<(), String> {
        let value = data.unwrap_or(v);
        let t = self.ty(value);
        let n = t.bytes() as u32;
        if n % 16 != 0 || n == 0 {
            return Err(format!("oword block of {n} bytes is not a multiple of 16"));
        }
        self.out.payload.insert(value);
        let off = self.src(offset);
        let (reg, ty) = self.reg(value);
        let mut o = 0;
        while o < n {
            let l = [64u32, 32, 16]
                .into_iter()
                .find(|&l| l <= n - o && self.cfg.grfs_touched(o, o + l) <= self.cfg.max_operand_grfs)
                .unwrap_or(16);
            match data {
                None => {
                    let d = VDst { reg, ty, offs: vec![o] };
                    self.push(Opcode::OwordRead(surf), 1, Mode::NoMask, Some(d), vec![off.clone(), ud(l), ud(o)], None, true);
                }
                Some(_) => {
                    let srcs = vec![off.clone(), VSrc::Block { reg, off: o, ty }, ud(l), ud(o)];
                    self.push(Opcode::OwordWrite(surf), 1, Mode::NoMask, None, srcs, None, true);
                }
            }
            o += l;
        }
        self.out.bales += 1;
        Ok(())
    }

    /// Materializes a constant: one mov per run of equal elements.
    fn const_init(&mut self, c: ValueId) {
        let Op::Const(vec) = self.op_of(c).clone() else { unreachable!() };
        self.pos = 2 * self.out.defs[&c] as u32 + 1;
        let esz = vec.ty.size() as u32;
        let nums = vec.nums();
        let mut a = 0;
        while a < nums.len() {
            let mut b = a + 1;
            while b < nums.len() && vec.bytes[b * esz as usize..(b + 1) * esz as usize] == vec.bytes[a * esz as usize..(a + 1) * esz as usize] {
                b += 1;
            }
            let d = VDst { reg: VReg::Val(c), ty: vec.ty, offs: (a as u32..b as u32).map(|k| k * esz).collect() };
            self.push(Opcode::Mov, (b - a) as u32, Mode::NoMask, Some(d), vec![VSrc::Imm(nums[a], vec.ty)], None, false);
            a = b;
        }
    }
}
