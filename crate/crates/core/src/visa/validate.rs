use std::fmt;

use super::{Dst, Inst, MachineConfig, MaskCtl, Opcode, Program, Src};
use crate::types::Num;

/// A legality violation at instruction `index`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub inst: String,
    pub msg: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "instruction {} `{}`: {}", self.index, self.inst, self.msg)
    }
}

/// Expected source count and position of the block payload, if any.
fn shape(op: Opcode) -> (std::ops::RangeInclusive<usize>, Option<usize>) {
    match op {
        Opcode::Mov | Opcode::Any | Opcode::All | Opcode::SimdIf => (1..=1, None),
        Opcode::Bin(_) | Opcode::Cmp(_) => (2..=2, None),
        Opcode::Sel | Opcode::ISelect => (3..=3, None),
        Opcode::SimdElse | Opcode::SimdEnd => (0..=0, None),
        Opcode::MediaRead(_) => (5..=5, None),
        Opcode::MediaWrite(_) => (6..=6, Some(2)),
        Opcode::OwordRead(_) => (3..=3, None),
        Opcode::OwordWrite(_) => (4..=4, Some(1)),
        Opcode::ScatterRead(_) => (2..=2, None),
        Opcode::ScatterWrite(_) => (3..=3, None),
        Opcode::Atomic(..) => (1..=3, None),
    }
}

fn imm(s: &Src) -> Option<i64> {
    match s {
        Src::Imm { value: Num::Int(i), .. } => Some(*i),
        _ => None,
    }
}

/// Byte length of a block message payload.
pub(crate) fn payload_bytes(inst: &Inst) -> Option<u32> {
    let s = &inst.srcs;
    let n = match inst.op {
        Opcode::MediaRead(_) => imm(s.get(2)?)? * imm(s.get(3)?)?,
        Opcode::MediaWrite(_) => imm(s.get(3)?)? * imm(s.get(4)?)?,
        Opcode::OwordRead(_) => imm(s.get(1)?)?,
        Opcode::OwordWrite(_) => imm(s.get(2)?)?,
        _ => return None,
    };
    u32::try_from(n).ok()
}

/// Checks every instruction against `cfg`. Returns all violations found.
pub fn validate(p: &Program, cfg: &MachineConfig) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    for (index, inst) in p.insts.iter().enumerate() {
        for msg in check(inst, cfg) {
            out.push(Violation { index, inst: inst.to_string(), msg });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn check(inst: &Inst, cfg: &MachineConfig) -> Vec<String> {
    let mut errs = Vec::new();
    let exec = inst.exec;
    if !cfg.exec_sizes.contains(&exec) {
        errs.push(format!("execution size {exec} is not legal"));
    }
    if let MaskCtl::Lanes(o) = inst.mask {
        if o + exec > 32 {
            errs.push(format!("mask offset M{o} does not fit a {exec}-lane instruction"));
        }
    }
    let (count, block) = shape(inst.op);
    if !count.contains(&inst.srcs.len()) {
        errs.push(format!("{} takes {:?} sources, found {}", inst.op, count, inst.srcs.len()));
        return errs;
    }
    if inst.op.has_dst() != inst.dst.is_some() {
        errs.push("destination presence does not match the opcode".into());
    }
    let payload = payload_bytes(inst);
    if inst.op.is_memory() && block.is_some() != matches!(block.and_then(|b| inst.srcs.get(b)), Some(Src::Block { .. })) {
        errs.push("message payload must be a block operand".into());
    }
    if let Some(d) = inst.dst {
        let lanes = match inst.op {
            Opcode::Any | Opcode::All => 1,
            _ => exec,
        };
        let bytes = match payload {
            Some(b) => b,
            None => dst_span(&d, lanes),
        };
        if !cfg.dst_strides.contains(&d.stride) {
            errs.push(format!("destination stride {} is not legal", d.stride));
        }
        span(cfg, "destination", d.addr, d.addr + bytes, &mut errs);
    }
    let lanes = |k: usize| match (inst.op, k) {
        (Opcode::ISelect, 0) => 1,
        (Opcode::MediaRead(_) | Opcode::MediaWrite(_) | Opcode::OwordRead(_) | Opcode::OwordWrite(_), _) => 1,
        (Opcode::ScatterRead(_) | Opcode::ScatterWrite(_), 0) => 1,
        _ => exec,
    };
    let mut all: Vec<&Src> = inst.srcs.iter().collect();
    all.extend(inst.pred.as_ref());
    for (k, s) in all.into_iter().enumerate() {
        match *s {
            Src::Region { addr, v, w, h, ty } => {
                let n = if k == inst.srcs.len() { exec } else { lanes(k) };
                if !cfg.region_widths.contains(&w) {
                    errs.push(format!("source {k}: region width {w} is not legal"));
                }
                if !cfg.src_strides.contains(&v) || !cfg.src_strides.contains(&h) {
                    errs.push(format!("source {k}: region strides <{v};{w},{h}> are not legal"));
                }
                if w > n.max(1) || n % w.max(1) != 0 {
                    errs.push(format!("source {k}: width {w} does not divide execution size {n}"));
                }
                let addrs: Vec<u32> = (0..n).filter_map(|l| s.lane_addr(l)).collect();
                let lo = addrs.iter().copied().min().unwrap_or(addr);
                let hi = addrs.iter().copied().max().unwrap_or(addr) + ty.size() as u32;
                span(cfg, &format!("source {k}"), lo, hi, &mut errs);
            }
            Src::Block { addr, .. } => match payload {
                Some(b) => span(cfg, "payload", addr, addr + b, &mut errs),
                None => errs.push(format!("source {k}: block operand outside a block message")),
            },
            Src::Imm { .. } => {}
        }
    }
    errs
}

pub(crate) fn dst_span(d: &Dst, lanes: u32) -> u32 {
    (d.lane_addr(lanes.max(1) - 1) + d.ty.size() as u32) - d.addr
}

fn span(cfg: &MachineConfig, what: &str, lo: u32, hi: u32, errs: &mut Vec<String>) {
    if hi > cfg.file_bytes() {
        errs.push(format!("{what} extends past the register file"));
    }
    if hi - lo > cfg.max_operand_bytes() || cfg.grfs_touched(lo, hi) > cfg.max_operand_grfs {
        errs.push(format!("{what} spans bytes {lo}..{hi}, more than {} registers", cfg.max_operand_grfs));
    }
}
