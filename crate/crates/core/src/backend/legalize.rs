//! Splitting bales into pieces that satisfy the operand rules.

use super::build::Lowered;
use super::{natural_align, BackendStats, Mode, PDst, PSrc, Piece, VInst, VReg, VSrc};
use crate::types::BinOp;
use crate::visa::{MachineConfig, MaskCtl, Opcode};

const EXEC_ORDER: [u32; 6] = [32, 16, 8, 4, 2, 1];
const WIDTH_ORDER: [u32; 5] = [8, 16, 4, 2, 1];

fn span_ok(lo: u32, hi: u32, cfg: &MachineConfig) -> bool {
    hi - lo <= cfg.max_operand_bytes() && cfg.grfs_touched(lo, hi) <= cfg.max_operand_grfs
}

/// Region `(offset, v, w, h)` reading lane `k` at `offs[k]`, if one is legal.
pub(crate) fn fit_src(offs: &[u32], esz: u32, cfg: &MachineConfig) -> Option<(u32, u32, u32, u32)> {
    let n = offs.len() as u32;
    let base = offs[0];
    if offs.iter().all(|&o| o == base) {
        return Some((base, 0, 1, 0));
    }
    let lo = *offs.iter().min()?;
    let hi = offs.iter().max()? + esz;
    if !span_ok(lo, hi, cfg) {
        return None;
    }
    let elems = |b: u32| (b >= base && (b - base) % esz == 0).then(|| (b - base) / esz);
    for w in WIDTH_ORDER {
        if !cfg.region_widths.contains(&w) || w > n || n % w != 0 {
            continue;
        }
        let h = if w > 1 {
            match elems(offs[1]) {
                Some(h) => h,
                None => continue,
            }
        } else {
            0
        };
        let v = if n > w {
            match elems(offs[w as usize]) {
                Some(v) => v,
                None => continue,
            }
        } else if cfg.src_strides.contains(&(w * h)) {
            w * h
        } else {
            0
        };
        if !cfg.src_strides.contains(&v) || !cfg.src_strides.contains(&h) {
            continue;
        }
        if (0..n).all(|k| offs[k as usize] == base + ((k / w) * v + (k % w) * h) * esz) {
            return Some((base, v, w, h));
        }
    }
    None
}

/// Destination `(offset, stride)` writing lane `k` at `offs[k]`, if legal.
pub(crate) fn fit_dst(offs: &[u32], esz: u32, cfg: &MachineConfig) -> Option<(u32, u32)> {
    let n = offs.len() as u32;
    let base = offs[0];
    let stride = if n == 1 {
        1
    } else {
        let d = offs[1].checked_sub(base)?;
        if d == 0 || d % esz != 0 {
            return None;
        }
        d / esz
    };
    if !cfg.dst_strides.contains(&stride) {
        return None;
    }
    if (0..n).any(|k| offs[k as usize] != base + k * stride * esz) {
        return None;
    }
    span_ok(base, base + (n - 1) * stride * esz + esz, cfg).then_some((base, stride))
}

fn mask(mode: Mode, a: u32) -> MaskCtl {
    match mode {
        Mode::Masked => MaskCtl::Lanes(a),
        Mode::Top => MaskCtl::Lanes(0),
        Mode::NoMask => MaskCtl::NoMask,
    }
}

fn piece_src(s: &VSrc, a: u32, n: u32, cfg: &MachineConfig) -> Option<PSrc> {
    Some(match s {
        VSrc::Reg { reg, ty, offs, .. } => {
            let slice = if offs.len() == 1 { &offs[..] } else { &offs[a as usize..(a + n) as usize] };
            let (off, v, w, h) = fit_src(slice, ty.size() as u32, cfg)?;
            PSrc::Region { reg: *reg, off, v, w, h, ty: *ty }
        }
        VSrc::Block { reg, off, ty } => PSrc::Block { reg: *reg, off: *off, ty: *ty },
        VSrc::Imm(x, ty) => PSrc::Imm(*x, *ty),
    })
}

fn piece(vi: &VInst, a: u32, n: u32, cfg: &MachineConfig) -> Option<Piece> {
    let dst = match &vi.dst {
        None => None,
        Some(d) if d.offs.len() == 1 => Some(PDst { reg: d.reg, off: d.offs[0], stride: 1, ty: d.ty }),
        Some(d) => {
            let (off, stride) = fit_dst(&d.offs[a as usize..(a + n) as usize], d.ty.size() as u32, cfg)?;
            Some(PDst { reg: d.reg, off, stride, ty: d.ty })
        }
    };
    let srcs = vi.srcs.iter().map(|s| piece_src(s, a, n, cfg)).collect::<Option<Vec<_>>>()?;
    let pred = match &vi.pred {
        Some(p) => Some(piece_src(p, a, n, cfg)?),
        None => None,
    };
    Some(Piece { op: vi.op, exec: n, mask: mask(vi.mode, a), dst, srcs, pred, pos: vi.pos })
}

/// Splits along lanes, largest legal execution size first.
pub(crate) fn split(vi: &VInst, cfg: &MachineConfig) -> Option<Vec<Piece>> {
    if vi.block {
        let scalar = |s: &VSrc| match s {
            VSrc::Reg { reg, ty, offs, .. } => PSrc::Region { reg: *reg, off: offs[0], v: 0, w: 1, h: 0, ty: *ty },
            VSrc::Block { reg, off, ty } => PSrc::Block { reg: *reg, off: *off, ty: *ty },
            VSrc::Imm(x, ty) => PSrc::Imm(*x, *ty),
        };
        return Some(vec![Piece {
            op: vi.op,
            exec: vi.lanes,
            mask: mask(vi.mode, 0),
            dst: vi.dst.as_ref().map(|d| PDst { reg: d.reg, off: d.offs[0], stride: 1, ty: d.ty }),
            srcs: vi.srcs.iter().map(scalar).collect(),
            pred: None,
            pos: vi.pos,
        }]);
    }
    let mut out = Vec::new();
    let mut a = 0;
    while a < vi.lanes {
        let p = EXEC_ORDER
            .into_iter()
            .filter(|&n| n <= vi.lanes - a && cfg.exec_sizes.contains(&n))
            .find_map(|n| piece(vi, a, n, cfg))?;
        a += p.exec;
        out.push(p);
    }
    Some(out)
}

/// Copy of a folded source into a contiguous temporary, and the operand
/// reading the temporary.
fn unbaled(vi: &VInst, s: &VSrc, tmp: VReg) -> (VInst, VSrc) {
    let VSrc::Reg { ty, offs, .. } = s else { unreachable!() };
    let esz = ty.size() as u32;
    let n = if offs.len() == 1 { 1 } else { vi.lanes };
    let ident: Vec<u32> = (0..n).map(|k| k * esz).collect();
    let mode = if vi.mode == Mode::Masked { Mode::NoMask } else { vi.mode };
    let mov = VInst {
        op: Opcode::Mov,
        lanes: n,
        mode,
        dst: Some(super::VDst { reg: tmp, ty: *ty, offs: ident.clone() }),
        srcs: vec![s.clone()],
        pred: None,
        pos: vi.pos,
        block: false,
    };
    (mov, VSrc::Reg { reg: tmp, ty: *ty, offs: ident, baled: false })
}

fn is_baled(s: &VSrc) -> bool {
    matches!(s, VSrc::Reg { baled: true, offs, .. } if offs.len() > 1)
}

fn bytes_of(s: &VSrc, lanes: u32) -> u32 {
    match s {
        VSrc::Reg { ty, offs, .. } => ty.size() as u32 * if offs.len() == 1 { 1 } else { lanes },
        _ => 0,
    }
}

/// Legalizes every virtual instruction, un-baling sources whenever a
/// separate copy makes the bale cheaper.
pub(crate) fn legalize(lw: &mut Lowered, cfg: &MachineConfig, stats: &mut BackendStats) -> Result<Vec<Piece>, String> {
    let insts = std::mem::take(&mut lw.insts);
    let mut out = Vec::new();
    let fail = |vi: &VInst| format!("no legal split for `{}` over {} lanes", vi.op, vi.lanes);
    for mut vi in insts {
        let mut pieces = split(&vi, cfg).ok_or_else(|| fail(&vi))?;
        if !vi.block && vi.op != Opcode::SimdIf {
            for j in 0..vi.srcs.len() {
                if !is_baled(&vi.srcs[j]) || pieces.len() == 1 {
                    continue;
                }
                let probe = VReg::Temp(u32::MAX);
                let (mov, tsrc) = unbaled(&vi, &vi.srcs[j], probe);
                let mut alt = vi.clone();
                alt.srcs[j] = tsrc;
                let (Some(mp), Some(ap)) = (split(&mov, cfg), split(&alt, cfg)) else { continue };
                if mp.len() + ap.len() < pieces.len() {
                    let bytes = bytes_of(&vi.srcs[j], vi.lanes);
                    let tmp = lw.new_temp(bytes, natural_align(bytes, cfg.grf_bytes));
                    let (mov, tsrc) = unbaled(&vi, &vi.srcs[j], tmp);
                    out.extend(split(&mov, cfg).ok_or_else(|| fail(&mov))?);
                    vi.srcs[j] = tsrc;
                    pieces = split(&vi, cfg).ok_or_else(|| fail(&vi))?;
                    stats.unbaled += 1;
                }
            }
        }
        if vi.op == Opcode::SimdIf && pieces.len() != 1 {
            return Err(format!("simd_if condition over {} lanes needs more than one instruction", vi.lanes));
        }
        if matches!(vi.op, Opcode::Any | Opcode::All) && pieces.len() > 1 {
            let d = pieces[0].dst.unwrap();
            let tmp = lw.new_temp(d.ty.size() as u32, d.ty.size() as u32);
            let t = PDst { reg: tmp, off: 0, stride: 1, ty: d.ty };
            let combine = if vi.op == Opcode::Any { BinOp::Or } else { BinOp::And };
            let scalar = |p: PDst| PSrc::Region { reg: p.reg, off: p.off, v: 0, w: 1, h: 0, ty: p.ty };
            let mut rest = pieces.split_off(1);
            out.append(&mut pieces);
            for mut p in rest.drain(..) {
                p.dst = Some(t);
                out.push(p);
                out.push(Piece {
                    op: Opcode::Bin(combine),
                    exec: 1,
                    mask: MaskCtl::NoMask,
                    dst: Some(d),
                    srcs: vec![scalar(d), scalar(t)],
                    pred: None,
                    pos: vi.pos,
                });
            }
            continue;
        }
        out.extend(pieces);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MachineConfig {
        MachineConfig::default()
    }

    #[test]
    fn select_convert_source_regions() {
        // 6x24 block at row 1, column 3 of an 8x32 byte matrix.
        let offs: Vec<u32> = (0..144).map(|k| 32 + 3 + (k / 24) * 32 + k % 24).collect();
        let got: Vec<_> = offs.chunks(16).map(|c| fit_src(c, 1, &cfg()).unwrap()).collect();
        let regions: Vec<(u32, u32, u32, u32)> = got.iter().map(|&(o, v, w, h)| (o % 32, v, w, h)).collect();
        assert_eq!(&regions[..3], &[(3, 8, 8, 1), (19, 16, 8, 1), (11, 8, 8, 1)]);
        assert_eq!(regions.len(), 9);
        assert_eq!(fit_dst(&(0..16).map(|k| k * 4).collect::<Vec<_>>(), 4, &cfg()), Some((0, 1)));
    }

    #[test]
    fn illegal_regions_are_rejected() {
        // Lane order that no <V;W,H> describes.
        assert_eq!(fit_src(&[0, 8, 4, 16], 4, &cfg()), None);
        assert_eq!(fit_src(&[0, 8, 4, 12], 4, &cfg()), Some((0, 1, 2, 2)));
        // Three registers.
        let wide: Vec<u32> = (0..16).map(|k| 20 + k * 4).collect();
        assert_eq!(fit_src(&wide, 4, &cfg()), None);
        assert_eq!(fit_src(&[4, 4, 4, 4], 4, &cfg()), Some((4, 0, 1, 0)));
        assert_eq!(fit_dst(&[0, 12, 24], 4, &cfg()), None);
        assert_eq!(fit_dst(&[0, 8, 16], 4, &cfg()), Some((0, 2)));
    }
}
