//! Textual virtual ISA: instructions over a byte-addressed register file
//! with `<V;W,H>` source regions.

mod parse;
mod validate;

use std::fmt;

pub use parse::{parse_program, parse_programs, ParseError};
pub use validate::{validate, Violation};

use crate::ir::Param;
use crate::memory::AtomicOp;
use crate::types::{load, store, BinOp, CmpRel, ElemType, Num};

/// Register file and operand legality limits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineConfig {
    pub grf_bytes: u32,
    pub grf_count: u32,
    /// Registers a single operand may touch.
    pub max_operand_grfs: u32,
    pub exec_sizes: Vec<u32>,
    pub region_widths: Vec<u32>,
    pub src_strides: Vec<u32>,
    pub dst_strides: Vec<u32>,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            grf_bytes: 32,
            grf_count: 128,
            max_operand_grfs: 2,
            exec_sizes: vec![1, 2, 4, 8, 16, 32],
            region_widths: vec![1, 2, 4, 8, 16],
            src_strides: vec![0, 1, 2, 4, 8, 16, 32],
            dst_strides: vec![1, 2, 4],
        }
    }
}

impl MachineConfig {
    pub fn file_bytes(&self) -> u32 {
        self.grf_bytes * self.grf_count
    }

    pub fn max_operand_bytes(&self) -> u32 {
        self.grf_bytes * self.max_operand_grfs
    }

    /// Number of registers touched by bytes `lo..hi` (absolute addresses).
    pub fn grfs_touched(&self, lo: u32, hi: u32) -> u32 {
        if hi <= lo {
            return 0;
        }
        (hi - 1) / self.grf_bytes - lo / self.grf_bytes + 1
    }
}

/// Byte address of thread_x in the thread payload; thread_y follows.
pub const THREAD_X_ADDR: u32 = 0;
pub const THREAD_Y_ADDR: u32 = 4;
/// Scalar arguments are packed from this address.
pub const ARG_BASE: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dst {
    pub addr: u32,
    pub stride: u32,
    pub ty: ElemType,
}

impl Dst {
    pub fn lane_addr(&self, k: u32) -> u32 {
        self.addr + k * self.stride * self.ty.size() as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Src {
    Region { addr: u32, v: u32, w: u32, h: u32, ty: ElemType },
    /// Contiguous message payload starting at `addr`.
    Block { addr: u32, ty: ElemType },
    Imm { value: Num, ty: ElemType },
}

impl Src {
    pub fn ty(&self) -> ElemType {
        match self {
            Src::Region { ty, .. } | Src::Block { ty, .. } | Src::Imm { ty, .. } => *ty,
        }
    }

    pub fn scalar(addr: u32, ty: ElemType) -> Src {
        Src::Region { addr, v: 0, w: 1, h: 0, ty }
    }

    /// Byte address of lane `k` for a region operand.
    pub fn lane_addr(&self, k: u32) -> Option<u32> {
        match *self {
            Src::Region { addr, v, w, h, ty } => {
                let w = w.max(1);
                Some(addr + ((k / w) * v + (k % w) * h) * ty.size() as u32)
            }
            Src::Block { addr, ty } => Some(addr + k * ty.size() as u32),
            Src::Imm { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskCtl {
    /// Lanes `offset..offset+exec` of the current execution mask.
    Lanes(u32),
    NoMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Opcode {
    Mov,
    Bin(BinOp),
    Cmp(CmpRel),
    Sel,
    Any,
    All,
    ISelect,
    MediaRead(u32),
    MediaWrite(u32),
    OwordRead(u32),
    OwordWrite(u32),
    ScatterRead(u32),
    ScatterWrite(u32),
    Atomic(AtomicOp, u32),
    SimdIf,
    SimdElse,
    SimdEnd,
}

impl Opcode {
    pub fn is_marker(self) -> bool {
        matches!(self, Opcode::SimdIf | Opcode::SimdElse | Opcode::SimdEnd)
    }

    pub fn is_memory(self) -> bool {
        matches!(
            self,
            Opcode::MediaRead(_)
                | Opcode::MediaWrite(_)
                | Opcode::OwordRead(_)
                | Opcode::OwordWrite(_)
                | Opcode::ScatterRead(_)
                | Opcode::ScatterWrite(_)
                | Opcode::Atomic(..)
        )
    }

    pub fn has_dst(self) -> bool {
        !self.is_marker() && !matches!(self, Opcode::MediaWrite(_) | Opcode::OwordWrite(_) | Opcode::ScatterWrite(_))
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opcode::Mov => f.write_str("mov"),
            Opcode::Bin(op) => f.write_str(op.mnemonic()),
            Opcode::Cmp(rel) => write!(f, "cmp.{}", rel.mnemonic()),
            Opcode::Sel => f.write_str("sel"),
            Opcode::Any => f.write_str("any"),
            Opcode::All => f.write_str("all"),
            Opcode::ISelect => f.write_str("iselect"),
            Opcode::MediaRead(s) => write!(f, "media_read.s{s}"),
            Opcode::MediaWrite(s) => write!(f, "media_write.s{s}"),
            Opcode::OwordRead(s) => write!(f, "oword_read.s{s}"),
            Opcode::OwordWrite(s) => write!(f, "oword_write.s{s}"),
            Opcode::ScatterRead(s) => write!(f, "scatter_read.s{s}"),
            Opcode::ScatterWrite(s) => write!(f, "scatter_write.s{s}"),
            Opcode::Atomic(op, s) => write!(f, "atomic.{}.s{s}", op.name()),
            Opcode::SimdIf => f.write_str("simd_if"),
            Opcode::SimdElse => f.write_str("simd_else"),
            Opcode::SimdEnd => f.write_str("simd_end"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inst {
    pub op: Opcode,
    pub exec: u32,
    pub mask: MaskCtl,
    /// Per-lane predicate: a lane is written only where this is nonzero.
    pub pred: Option<Src>,
    pub dst: Option<Dst>,
    pub srcs: Vec<Src>,
}

impl Inst {
    pub fn new(op: Opcode, exec: u32, mask: MaskCtl, dst: Option<Dst>, srcs: Vec<Src>) -> Inst {
        Inst { op, exec, mask, pred: None, dst, srcs }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub name: String,
    pub params: Vec<Param>,
    /// Register address of each scalar parameter, by parameter index.
    pub arg_addrs: Vec<Option<u32>>,
    pub insts: Vec<Inst>,
}

impl Program {
    pub fn surface_name(&self, s: u32) -> &str {
        self.params[s as usize].name()
    }

    /// Lays out scalar parameters from [`ARG_BASE`], each aligned to its size.
    pub fn arg_layout(params: &[Param]) -> (Vec<Option<u32>>, u32) {
        let mut next = ARG_BASE;
        let addrs = params
            .iter()
            .map(|p| match p {
                Param::Scalar { ty, .. } => {
                    let sz = ty.size() as u32;
                    let a = next.div_ceil(sz) * sz;
                    next = a + sz;
                    Some(a)
                }
                Param::Surface { .. } => None,
            })
            .collect();
        (addrs, next)
    }
}

pub fn fmt_addr(addr: u32) -> String {
    format!("r{}.{}", addr / 32, addr % 32)
}

/// Raw bits of `value` in `ty`, as printed in immediates.
pub fn imm_bits(value: Num, ty: ElemType) -> u64 {
    let mut buf = [0u8; 8];
    store(ty, value, &mut buf);
    u64::from_le_bytes(buf)
}

pub fn imm_from_bits(bits: u64, ty: ElemType) -> Num {
    load(ty, &bits.to_le_bytes())
}

impl fmt::Display for Dst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}<{}>:{}", fmt_addr(self.addr), self.stride, self.ty.suffix())
    }
}

impl fmt::Display for Src {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Src::Region { addr, v, w, h, ty } => write!(f, "{}<{v};{w},{h}>:{}", fmt_addr(addr), ty.suffix()),
            Src::Block { addr, ty } => write!(f, "{}<1>:{}", fmt_addr(addr), ty.suffix()),
            Src::Imm { value, ty } => write!(f, "0x{:X}:{}", imm_bits(value, ty), ty.suffix()),
        }
    }
}

impl fmt::Display for Inst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.pred {
            write!(f, "({p}) ")?;
        }
        let mask = match self.mask {
            MaskCtl::Lanes(o) => format!("M{o}"),
            MaskCtl::NoMask => "NM".into(),
        };
        write!(f, "{} ({}|{mask})", self.op, self.exec)?;
        if let Some(d) = &self.dst {
            write!(f, " {d}")?;
        }
        for s in &self.srcs {
            write!(f, " {s}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, ".kernel {}", self.name)?;
        for (p, a) in self.params.iter().zip(&self.arg_addrs) {
            match (p, a) {
                (Param::Surface { name }, _) => writeln!(f, ".param surface {name}")?,
                (Param::Scalar { name, ty }, Some(a)) => writeln!(f, ".param {} {name} {}", ty.suffix(), fmt_addr(*a))?,
                (Param::Scalar { name, ty }, None) => writeln!(f, ".param {} {name}", ty.suffix())?,
            }
        }
        for i in &self.insts {
            writeln!(f, "{i}")?;
        }
        Ok(())
    }
}

/// Rewrites register numbers so the first register mentioned becomes r0,
/// the next new one r1, and so on. Subregister offsets are kept.
pub fn normalize_registers(text: &str) -> String {
    let mut map: Vec<(u32, u32)> = Vec::new();
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut k = 0;
    while k < bytes.len() {
        let at_word = k == 0 || !(bytes[k - 1].is_ascii_alphanumeric() || bytes[k - 1] == b'_');
        if at_word && bytes[k] == b'r' && k + 1 < bytes.len() && bytes[k + 1].is_ascii_digit() {
            let mut j = k + 1;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'.' {
                let n: u32 = text[k + 1..j].parse().unwrap();
                let id = match map.iter().find(|(r, _)| *r == n) {
                    Some((_, id)) => *id,
                    None => {
                        let id = map.len() as u32;
                        map.push((n, id));
                        id
                    }
                };
                out.push_str(&format!("r{id}"));
                k = j;
                continue;
            }
        }
        out.push(bytes[k] as char);
        k += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operand_text() {
        let d = Dst { addr: 11 * 32, stride: 1, ty: ElemType::F };
        assert_eq!(d.to_string(), "r11.0<1>:f");
        let s = Src::Region { addr: 4 * 32 + 3, v: 8, w: 8, h: 1, ty: ElemType::Ub };
        assert_eq!(s.to_string(), "r4.3<8;8,1>:ub");
        let i = Inst::new(Opcode::Mov, 16, MaskCtl::Lanes(0), Some(d), vec![s]);
        assert_eq!(i.to_string(), "mov (16|M0) r11.0<1>:f r4.3<8;8,1>:ub");
        let imm = Src::Imm { value: Num::Float(0.1111f32 as f64), ty: ElemType::F };
        assert_eq!(imm.to_string(), "0x3DE38866:f");
        let neg = Src::Imm { value: Num::Int(-1), ty: ElemType::W };
        assert_eq!(neg.to_string(), "0xFFFF:w");
    }

    #[test]
    fn lane_addresses_follow_region_formula() {
        let s = Src::Region { addr: 4 * 32 + 19, v: 16, w: 8, h: 1, ty: ElemType::Ub };
        let got: Vec<u32> = (0..16).map(|k| s.lane_addr(k).unwrap()).collect();
        let want: Vec<u32> = (0..16).map(|k| 4 * 32 + 19 + (k / 8) * 16 + k % 8).collect();
        assert_eq!(got, want);
        let b = Src::scalar(100, ElemType::D);
        assert!((0..8).all(|k| b.lane_addr(k) == Some(100)));
    }

    #[test]
    fn registers_normalize_in_order_of_appearance() {
        let t = "mov (16|M0) r11.0<1>:f r4.3<8;8,1>:ub\nmov (16|M16) r13.0<1>:f r4.19<16;8,1>:ub";
        assert_eq!(
            normalize_registers(t),
            "mov (16|M0) r0.0<1>:f r1.3<8;8,1>:ub\nmov (16|M16) r2.0<1>:f r1.19<16;8,1>:ub"
        );
    }

    #[test]
    fn arg_layout_aligns_each_scalar() {
        let params = vec![
            Param::Surface { name: "s".into() },
            Param::Scalar { name: "a".into(), ty: ElemType::W },
            Param::Scalar { name: "b".into(), ty: ElemType::D },
        ];
        let (addrs, end) = Program::arg_layout(&params);
        assert_eq!(addrs, vec![None, Some(32), Some(36)]);
        assert_eq!(end, 40);
    }
}
