//! Lowering of region IR to the virtual ISA: baling, legalization, register
//! allocation and emission.

mod bale;
mod build;
mod legalize;
mod regalloc;

use thiserror::Error;

pub use bale::{analyze_bales, clone_regions, BaleMap, Fold};

use crate::ir::{verify, Module, ValueId, VerifyError};
use crate::types::{ElemType, Num};
use crate::visa::{self, MachineConfig, Opcode, Program};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("kernel `{kernel}`: {err}")]
    Verify { kernel: String, err: VerifyError },
    #[error("kernel `{kernel}`: {msg}")]
    Unsupported { kernel: String, msg: String },
    #[error(
        "kernel `{kernel}`: register pressure of {needed} bytes at {at} exceeds the {available}-byte register file; live values: {}",
        live.join(", ")
    )]
    Pressure { kernel: String, needed: u32, available: u32, at: String, live: Vec<String> },
    #[error("kernel `{kernel}`: generated code is illegal: {msg}")]
    Internal { kernel: String, msg: String },
}

/// Counters describing one compilation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BackendStats {
    pub bales: usize,
    pub instructions: usize,
    pub cloned: usize,
    pub unbaled: usize,
    pub promoted: usize,
    pub copies: usize,
    pub coalesced: usize,
    pub grfs: u32,
    pub peak_bytes: u32,
}

impl BackendStats {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("asm.bales={}", self.bales),
            format!("asm.instructions={}", self.instructions),
            format!("asm.cloned={}", self.cloned),
            format!("asm.unbaled={}", self.unbaled),
            format!("asm.promoted={}", self.promoted),
            format!("asm.copies={}", self.copies),
            format!("asm.coalesced={}", self.coalesced),
            format!("asm.grfs={}", self.grfs),
            format!("asm.peak_bytes={}", self.peak_bytes),
        ]
    }
}

/// A register before allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum VReg {
    Val(ValueId),
    Temp(u32),
    /// Preassigned address (thread payload, arguments).
    Fixed(u32),
}

/// Destination lanes as byte offsets into `reg`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct VDst {
    pub reg: VReg,
    pub ty: ElemType,
    pub offs: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum VSrc {
    /// Per-lane byte offsets into `reg`; a single offset is broadcast.
    Reg { reg: VReg, ty: ElemType, offs: Vec<u32>, baled: bool },
    Block { reg: VReg, off: u32, ty: ElemType },
    Imm(Num, ElemType),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Mode {
    /// No per-lane mask is in force.
    Top,
    /// Runs under the innermost per-lane mask.
    Masked,
    NoMask,
}

/// One bale (or helper instruction) before splitting into legal pieces.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct VInst {
    pub op: Opcode,
    pub lanes: u32,
    pub mode: Mode,
    pub dst: Option<VDst>,
    pub srcs: Vec<VSrc>,
    pub pred: Option<VSrc>,
    /// Ordering key: `2k+1` for IR instruction `k`, `2k` for code placed
    /// just before it.
    pub pos: u32,
    /// Emitted as a single instruction without splitting.
    pub block: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PDst {
    pub reg: VReg,
    pub off: u32,
    pub stride: u32,
    pub ty: ElemType,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum PSrc {
    Region { reg: VReg, off: u32, v: u32, w: u32, h: u32, ty: ElemType },
    Block { reg: VReg, off: u32, ty: ElemType },
    Imm(Num, ElemType),
}

/// A legal instruction over unallocated registers.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Piece {
    pub op: Opcode,
    pub exec: u32,
    pub mask: visa::MaskCtl,
    pub dst: Option<PDst>,
    pub srcs: Vec<PSrc>,
    pub pred: Option<PSrc>,
    pub pos: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TempInfo {
    pub bytes: u32,
    pub align: u32,
}

pub(crate) fn natural_align(bytes: u32, grf: u32) -> u32 {
    if bytes >= grf {
        grf
    } else {
        bytes.max(1).next_power_of_two()
    }
}

/// Compiles one verified, optimized module.
pub fn compile(m: &Module, cfg: &MachineConfig) -> Result<(Program, BackendStats), BackendError> {
    let kernel = m.name.clone();
    verify(m).map_err(|err| BackendError::Verify { kernel: kernel.clone(), err })?;
    let (m, cloned) = clone_regions(m);
    let bales = analyze_bales(&m);
    let (arg_addrs, args_end) = Program::arg_layout(&m.params);
    let unsupported = |msg: String| BackendError::Unsupported { kernel: kernel.clone(), msg };
    let mut lowered = build::lower(&m, &bales, &arg_addrs, cfg).map_err(unsupported)?;
    let internal = |msg: String| BackendError::Internal { kernel: kernel.clone(), msg };
    let mut stats = BackendStats { cloned, bales: lowered.bales, promoted: lowered.promoted, ..Default::default() };
    let pieces = legalize::legalize(&mut lowered, cfg, &mut stats).map_err(internal)?;
    let alloc = regalloc::allocate(&m, &lowered, pieces, cfg, args_end, &mut stats)?;
    let insts: Vec<visa::Inst> = alloc.pieces.iter().map(|p| alloc.emit(p)).collect();
    stats.instructions = insts.len();
    let program = Program { name: m.name.clone(), params: m.params.clone(), arg_addrs, insts };
    if let Err(v) = visa::validate(&program, cfg) {
        let msg = v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(internal(msg));
    }
    Ok((program, stats))
}

/// Movs whose source and destination cover the same bytes with the same type.
pub fn redundant_movs(p: &Program) -> Vec<usize> {
    p.insts
        .iter()
        .enumerate()
        .filter(|(_, i)| i.op == Opcode::Mov && i.pred.is_none())
        .filter(|(_, i)| {
            let (Some(d), Some(s)) = (i.dst, i.srcs.first()) else { return false };
            if s.ty() != d.ty || matches!(s, visa::Src::Imm { .. }) {
                return false;
            }
            (0..i.exec).all(|k| s.lane_addr(k) == Some(d.lane_addr(k)))
        })
        .map(|(k, _)| k)
        .collect()
}

#[cfg(test)]
mod tests;
