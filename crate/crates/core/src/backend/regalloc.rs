//! Live ranges, in-place updates and linear-scan allocation over the
//! register file's bytes.

use std::collections::{BTreeMap, HashMap};

use super::build::{Lowered, WrInfo};
use super::legalize::split;
use super::{natural_align, BackendError, BackendStats, Mode, PDst, PSrc, Piece, VDst, VInst, VReg, VSrc};
use crate::ir::{Module, Op, ValueId};
use crate::visa::{self, MachineConfig, Opcode};

pub(crate) struct Allocation {
    pub pieces: Vec<Piece>,
    addr: HashMap<VReg, u32>,
}

impl Allocation {
    fn at(&self, r: VReg) -> u32 {
        match r {
            VReg::Fixed(a) => a,
            r => self.addr[&r],
        }
    }

    fn src(&self, s: &PSrc) -> visa::Src {
        match *s {
            PSrc::Region { reg, off, v, w, h, ty } => visa::Src::Region { addr: self.at(reg) + off, v, w, h, ty },
            PSrc::Block { reg, off, ty } => visa::Src::Block { addr: self.at(reg) + off, ty },
            PSrc::Imm(value, ty) => visa::Src::Imm { value, ty },
        }
    }

    pub fn emit(&self, p: &Piece) -> visa::Inst {
        visa::Inst {
            op: p.op,
            exec: p.exec,
            mask: p.mask,
            pred: p.pred.as_ref().map(|s| self.src(s)),
            dst: p.dst.map(|d| visa::Dst { addr: self.at(d.reg) + d.off, stride: d.stride, ty: d.ty }),
            srcs: p.srcs.iter().map(|s| self.src(s)).collect(),
        }
    }
}

fn src_regs(p: &Piece) -> impl Iterator<Item = VReg> + '_ {
    p.srcs.iter().chain(p.pred.iter()).filter_map(|s| match s {
        PSrc::Region { reg, .. } | PSrc::Block { reg, .. } => Some(*reg),
        PSrc::Imm(..) => None,
    })
}

/// Bytes of `reg` a piece reads.
fn read_bytes(p: &Piece, reg: VReg) -> Vec<u32> {
    let mut out = Vec::new();
    for s in p.srcs.iter().chain(p.pred.iter()) {
        if let PSrc::Region { reg: r, off, v, w, h, ty } = *s {
            if r == reg {
                let esz = ty.size() as u32;
                for k in 0..p.exec {
                    let o = off + ((k / w) * v + (k % w) * h) * esz;
                    out.extend(o..o + esz);
                }
            }
        }
    }
    out
}

fn written_bytes(p: &Piece, reg: VReg) -> Vec<u32> {
    match p.dst {
        Some(PDst { reg: r, off, stride, ty }) if r == reg => {
            let esz = ty.size() as u32;
            (0..p.exec).flat_map(|k| off + k * stride * esz..off + k * stride * esz + esz).collect()
        }
        _ => vec![],
    }
}

/// Whether writing `w` over `old`'s register in place could clobber bytes a
/// later piece of the same bale still reads.
fn in_place_hazard(pieces: &[Piece], w: VReg, old: VReg) -> bool {
    let mut written = std::collections::HashSet::new();
    for p in pieces {
        if read_bytes(p, old).iter().any(|b| written.contains(b)) {
            return true;
        }
        written.extend(written_bytes(p, w));
    }
    false
}

struct Classes {
    parent: HashMap<VReg, VReg>,
}

impl Classes {
    fn find(&self, mut r: VReg) -> VReg {
        while let Some(&p) = self.parent.get(&r) {
            r = p;
        }
        r
    }

    fn union(&mut self, child: VReg, into: VReg) {
        let (a, b) = (self.find(child), self.find(into));
        if a != b {
            self.parent.insert(a, b);
        }
    }
}

fn value_reg(m: &Module, lw: &Lowered, v: ValueId) -> VReg {
    match m.insts[lw.defs[&v]].op {
        Op::Arg(_) | Op::ThreadX | Op::ThreadY => VReg::Fixed(u32::MAX),
        _ => VReg::Val(v),
    }
}

fn ranges(pieces: &[Piece], wrs: &[WrInfo]) -> (HashMap<VReg, u32>, HashMap<VReg, u32>) {
    let mut first: HashMap<VReg, u32> = HashMap::new();
    let mut last: HashMap<VReg, u32> = HashMap::new();
    let mut touch = |r: VReg, pos: u32| {
        if matches!(r, VReg::Fixed(_)) {
            return;
        }
        let f = first.entry(r).or_insert(pos);
        *f = (*f).min(pos);
        let l = last.entry(r).or_insert(pos);
        *l = (*l).max(pos);
    };
    for p in pieces {
        for r in src_regs(p) {
            touch(r, p.pos);
        }
        if let Some(d) = p.dst {
            touch(d.reg, p.pos);
        }
    }
    for w in wrs {
        touch(VReg::Val(w.old), 2 * w.idx as u32 + 1);
    }
    (first, last)
}

/// Copies initializing a `wrregion` that cannot update its old value in place.
fn copies_for(m: &Module, lw: &Lowered, wr: &WrInfo, kernel: &str) -> Result<Vec<(ValueId, u32)>, BackendError> {
    let tree = &lw.tree;
    let scope_of = |v: ValueId| tree.inst_scope[lw.defs[&v]];
    let d = scope_of(wr.old);
    let mut outer = None;
    let mut cur = tree.inst_scope[wr.idx];
    while !tree.within(d, cur) {
        outer = Some(cur);
        cur = tree.scopes[cur].parent.expect("top scope contains every definition");
    }
    let Some(s) = outer else { return Ok(vec![(wr.old, 2 * wr.idx as u32)]) };
    let q = tree.scopes[s].opener.expect("nested scope has an opener");
    let then_scope = (0..tree.scopes.len()).find(|&k| tree.scopes[k].opener == Some(q)).unwrap();
    if s == then_scope || !tree.within(d, then_scope) {
        return Ok(vec![(wr.old, 2 * q as u32)]);
    }
    // `old` comes out of the then branch: seed with the value the branch
    // started from, then refresh at the end of the branch.
    let mut base = wr.old;
    while tree.within(scope_of(base), then_scope) {
        match m.insts[lw.defs[&base]].op {
            Op::WrRegion { old, .. } => base = old,
            _ => {
                return Err(BackendError::Unsupported {
                    kernel: kernel.into(),
                    msg: format!("{} escapes its SIMD region without a region write chain", wr.old),
                })
            }
        }
    }
    let els = tree.matching[&q].0.expect("else scope implies simd_else");
    Ok(vec![(base, 2 * q as u32), (wr.old, 2 * els as u32)])
}

pub(crate) fn allocate(
    m: &Module,
    lw: &Lowered,
    mut pieces: Vec<Piece>,
    cfg: &MachineConfig,
    args_end: u32,
    stats: &mut BackendStats,
) -> Result<Allocation, BackendError> {
    let kernel = m.name.clone();
    let (_, last) = ranges(&pieces, &lw.wrs);
    let mut classes = Classes { parent: HashMap::new() };
    let mut extra: Vec<VInst> = Vec::new();
    for wr in &lw.wrs {
        let pos = 2 * wr.idx as u32 + 1;
        let (w, old) = (VReg::Val(wr.w), value_reg(m, lw, wr.old));
        let bale: Vec<Piece> = pieces.iter().filter(|p| p.pos == pos).cloned().collect();
        let dies = last.get(&old) == Some(&pos);
        if !matches!(old, VReg::Fixed(_)) && dies && !in_place_hazard(&bale, w, old) {
            classes.union(w, old);
            stats.coalesced += 1;
            continue;
        }
        for (src, at) in copies_for(m, lw, wr, &kernel)? {
            let t = lw.types[&wr.w];
            let esz = t.elem.size() as u32;
            let ident: Vec<u32> = (0..t.len).map(|k| k * esz).collect();
            let sreg = match value_reg(m, lw, src) {
                VReg::Fixed(_) => fixed_addr(m, src),
                r => r,
            };
            extra.push(VInst {
                op: Opcode::Mov,
                lanes: t.len,
                mode: Mode::NoMask,
                dst: Some(VDst { reg: w, ty: t.elem, offs: ident.clone() }),
                srcs: vec![VSrc::Reg { reg: sreg, ty: t.elem, offs: if t.len == 1 { vec![0] } else { ident }, baled: false }],
                pred: None,
                pos: at,
                block: false,
            });
            stats.copies += 1;
        }
    }
    for vi in &extra {
        let ps = split(vi, cfg).ok_or_else(|| BackendError::Internal {
            kernel: kernel.clone(),
            msg: "copy could not be legalized".into(),
        })?;
        pieces.extend(ps);
    }
    pieces.sort_by_key(|p| p.pos);

    // Live ranges of the coalesced classes.
    let (first, last) = ranges(&pieces, &lw.wrs);
    let mut spans: BTreeMap<VReg, (u32, u32, u32, u32)> = BTreeMap::new();
    for (&r, &f) in &first {
        let l = last[&r];
        let (bytes, align) = match r {
            VReg::Val(v) => {
                let b = lw.types[&v].bytes() as u32;
                let a = if lw.payload.contains(&v) { cfg.grf_bytes } else { natural_align(b, cfg.grf_bytes) };
                (b, a)
            }
            VReg::Temp(t) => (lw.temps[t as usize].bytes, lw.temps[t as usize].align),
            VReg::Fixed(_) => continue,
        };
        let e = spans.entry(classes.find(r)).or_insert((f, l, bytes, align));
        *e = (e.0.min(f), e.1.max(l), e.2.max(bytes), e.3.max(align));
    }
    let mut order: Vec<(VReg, (u32, u32, u32, u32))> = spans.into_iter().collect();
    order.sort_by_key(|&(r, (f, ..))| (f, r));

    let file = cfg.file_bytes();
    let reserved = args_end.div_ceil(cfg.grf_bytes) * cfg.grf_bytes;
    let mut active: Vec<(VReg, u32, u32, u32)> = Vec::new(); // reg, end, addr, bytes
    let mut base: HashMap<VReg, u32> = HashMap::new();
    let mut top = reserved;
    for (r, (start, end, bytes, align)) in order {
        active.retain(|&(_, e, _, _)| e >= start);
        let mut used = vec![false; file as usize];
        for &(_, _, a, b) in &active {
            used[a as usize..(a + b) as usize].iter_mut().for_each(|x| *x = true);
        }
        let slot = (reserved..file.saturating_sub(bytes) + 1)
            .step_by(align as usize)
            .find(|&a| !used[a as usize..(a + bytes) as usize].iter().any(|&x| x));
        let live_bytes: u32 = active.iter().map(|a| a.3).sum::<u32>() + bytes;
        stats.peak_bytes = stats.peak_bytes.max(live_bytes + reserved);
        let Some(a) = slot else {
            let mut live: Vec<(VReg, u32)> = active.iter().map(|a| (a.0, a.3)).collect();
            live.push((r, bytes));
            live.sort_by_key(|&(r, b)| (std::cmp::Reverse(b), r));
            let describe = |(r, b): (VReg, u32)| match r {
                VReg::Val(v) => format!("{v} ({}, {b} bytes)", lw.types[&v]),
                VReg::Temp(_) | VReg::Fixed(_) => format!("temporary ({b} bytes)"),
            };
            let at = m.insts[(start / 2) as usize].id;
            return Err(BackendError::Pressure {
                kernel,
                needed: live_bytes + reserved,
                available: file,
                at: at.to_string(),
                live: live.into_iter().map(describe).collect(),
            });
        };
        base.insert(r, a);
        top = top.max(a + bytes);
        active.push((r, end, a, bytes));
    }
    stats.grfs = top.div_ceil(cfg.grf_bytes);
    let mut addr = HashMap::new();
    for (&r, _) in first.iter() {
        if let Some(&a) = base.get(&classes.find(r)) {
            addr.insert(r, a);
        }
    }
    Ok(Allocation { pieces, addr })
}

fn fixed_addr(m: &Module, v: ValueId) -> VReg {
    let (addrs, _) = visa::Program::arg_layout(&m.params);
    let op = &m.insts.iter().find(|i| i.id == v).unwrap().op;
    VReg::Fixed(match *op {
        Op::Arg(i) => addrs[i as usize].unwrap(),
        Op::ThreadX => visa::THREAD_X_ADDR,
        _ => visa::THREAD_Y_ADDR,
    })
}
