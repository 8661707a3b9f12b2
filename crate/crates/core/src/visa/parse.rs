use thiserror::Error;

use super::{imm_from_bits, Dst, Inst, MaskCtl, Opcode, Program, Src};
use crate::ir::Param;
use crate::memory::AtomicOp;
use crate::types::{BinOp, CmpRel, ElemType};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

/// Parses assembly text as printed by `Program`'s `Display`.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut name = None;
    let mut params = Vec::new();
    let mut arg_addrs = Vec::new();
    let mut insts = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split("//").next().unwrap().trim();
        let err = |msg: String| ParseError { line: n + 1, msg };
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words[0] {
            ".kernel" => {
                let [_, k] = words[..] else { return Err(err("expected `.kernel NAME`".into())) };
                name = Some(k.to_string());
            }
            ".param" => match words[..] {
                [_, "surface", p] => {
                    params.push(Param::Surface { name: p.into() });
                    arg_addrs.push(None);
                }
                [_, t, p, a] => {
                    let ty = ElemType::from_suffix(t).ok_or_else(|| err(format!("unknown type `{t}`")))?;
                    params.push(Param::Scalar { name: p.into(), ty });
                    arg_addrs.push(Some(parse_addr(a).map_err(err)?));
                }
                _ => return Err(err("expected `.param surface NAME` or `.param TYPE NAME rN.B`".into())),
            },
            _ => insts.push(parse_inst(line).map_err(err)?),
        }
    }
    let name = name.ok_or(ParseError { line: 1, msg: "missing `.kernel` header".into() })?;
    Ok(Program { name, params, arg_addrs, insts })
}

/// Parses a file holding one or more programs, each starting at its
/// `.kernel` line.
pub fn parse_programs(text: &str) -> Result<Vec<Program>, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let starts: Vec<usize> =
        (0..lines.len()).filter(|&k| lines[k].trim_start().starts_with(".kernel")).collect();
    if starts.is_empty() {
        return parse_program(text).map(|p| vec![p]);
    }
    if let Some(k) = (0..starts[0]).find(|&k| !lines[k].split("//").next().unwrap().trim().is_empty()) {
        return Err(ParseError { line: k + 1, msg: "text before the first `.kernel` header".into() });
    }
    let mut out = Vec::new();
    for (i, &a) in starts.iter().enumerate() {
        let b = starts.get(i + 1).copied().unwrap_or(lines.len());
        let p = parse_program(&lines[a..b].join("\n")).map_err(|e| ParseError { line: e.line + a, msg: e.msg })?;
        out.push(p);
    }
    Ok(out)
}

fn parse_inst(line: &str) -> Result<Inst, String> {
    let mut rest = line;
    let mut pred = None;
    if let Some(r) = rest.strip_prefix('(') {
        let close = r.find(')').ok_or("unterminated predicate")?;
        pred = Some(parse_src(r[..close].trim())?);
        rest = r[close + 1..].trim_start();
    }
    let (opname, r) = rest.split_once(char::is_whitespace).ok_or("missing execution size")?;
    let op = parse_opcode(opname)?;
    let r = r.trim_start();
    let r = r.strip_prefix('(').ok_or("expected `(EXEC|MASK)`")?;
    let close = r.find(')').ok_or("expected `(EXEC|MASK)`")?;
    let (exec, mask) = r[..close].split_once('|').ok_or("expected `(EXEC|MASK)`")?;
    let exec: u32 = exec.trim().parse().map_err(|_| format!("bad execution size `{exec}`"))?;
    let mask = match mask.trim() {
        "NM" => MaskCtl::NoMask,
        m => MaskCtl::Lanes(
            m.strip_prefix('M').and_then(|o| o.parse().ok()).ok_or_else(|| format!("bad mask `{m}`"))?,
        ),
    };
    let mut operands = r[close + 1..].split_whitespace();
    let dst = if op.has_dst() {
        Some(parse_dst(operands.next().ok_or("missing destination")?)?)
    } else {
        None
    };
    let srcs = operands.map(parse_src).collect::<Result<Vec<_>, _>>()?;
    Ok(Inst { op, exec, mask, pred, dst, srcs })
}

fn parse_opcode(s: &str) -> Result<Opcode, String> {
    let surf = |t: &str| -> Result<u32, String> {
        t.strip_prefix('s').and_then(|n| n.parse().ok()).ok_or_else(|| format!("bad surface in `{s}`"))
    };
    let parts: Vec<&str> = s.split('.').collect();
    Ok(match parts[..] {
        ["mov"] => Opcode::Mov,
        ["sel"] => Opcode::Sel,
        ["any"] => Opcode::Any,
        ["all"] => Opcode::All,
        ["iselect"] => Opcode::ISelect,
        ["simd_if"] => Opcode::SimdIf,
        ["simd_else"] => Opcode::SimdElse,
        ["simd_end"] => Opcode::SimdEnd,
        ["cmp", rel] => Opcode::Cmp(CmpRel::from_mnemonic(rel).ok_or_else(|| format!("unknown relation `{rel}`"))?),
        ["media_read", t] => Opcode::MediaRead(surf(t)?),
        ["media_write", t] => Opcode::MediaWrite(surf(t)?),
        ["oword_read", t] => Opcode::OwordRead(surf(t)?),
        ["oword_write", t] => Opcode::OwordWrite(surf(t)?),
        ["scatter_read", t] => Opcode::ScatterRead(surf(t)?),
        ["scatter_write", t] => Opcode::ScatterWrite(surf(t)?),
        ["atomic", a, t] => {
            Opcode::Atomic(AtomicOp::from_name(a).ok_or_else(|| format!("unknown atomic `{a}`"))?, surf(t)?)
        }
        [b] => Opcode::Bin(BinOp::from_mnemonic(b).ok_or_else(|| format!("unknown opcode `{s}`"))?),
        _ => return Err(format!("unknown opcode `{s}`")),
    })
}

fn parse_addr(s: &str) -> Result<u32, String> {
    let bad = || format!("bad register `{s}`");
    let (r, b) = s.strip_prefix('r').and_then(|x| x.split_once('.')).ok_or_else(bad)?;
    let r: u32 = r.parse().map_err(|_| bad())?;
    let b: u32 = b.parse().map_err(|_| bad())?;
    if b >= 32 {
        return Err(format!("subregister byte {b} is out of range in `{s}`"));
    }
    Ok(r * 32 + b)
}

fn split_typed(s: &str) -> Result<(&str, ElemType), String> {
    let (body, t) = s.rsplit_once(':').ok_or_else(|| format!("operand `{s}` has no type"))?;
    let ty = ElemType::from_suffix(t).ok_or_else(|| format!("unknown type `{t}`"))?;
    Ok((body, ty))
}

fn split_region(body: &str) -> Result<(u32, &str), String> {
    let open = body.find('<').ok_or_else(|| format!("operand `{body}` has no region"))?;
    let inner = body[open + 1..].strip_suffix('>').ok_or_else(|| format!("unterminated region in `{body}`"))?;
    Ok((parse_addr(&body[..open])?, inner))
}

fn num(s: &str) -> Result<u32, String> {
    s.trim().parse().map_err(|_| format!("bad number `{s}`"))
}

fn parse_dst(s: &str) -> Result<Dst, String> {
    let (body, ty) = split_typed(s)?;
    let (addr, inner) = split_region(body)?;
    Ok(Dst { addr, stride: num(inner)?, ty })
}

fn parse_src(s: &str) -> Result<Src, String> {
    let (body, ty) = split_typed(s)?;
    if let Some(hex) = body.strip_prefix("0x") {
        let bits = u64::from_str_radix(hex, 16).map_err(|_| format!("bad immediate `{s}`"))?;
        return Ok(Src::Imm { value: imm_from_bits(bits, ty), ty });
    }
    let (addr, inner) = split_region(body)?;
    match inner.split_once(';') {
        Some((v, wh)) => {
            let (w, h) = wh.split_once(',').ok_or_else(|| format!("bad region in `{s}`"))?;
            Ok(Src::Region { addr, v: num(v)?, w: num(w)?, h: num(h)?, ty })
        }
        None if num(inner)? == 1 => Ok(Src::Block { addr, ty }),
        None => Err(format!("block operand `{s}` must have stride 1")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Num;

    const TEXT: &str = ".kernel k
.param surface buf
.param d n r1.0
mov (16|M0) r11.0<1>:f r4.3<8;8,1>:ub
(r2.0<8;8,1>:uw) add (8|M8) r3.0<2>:w r5.0<0;1,0>:w 0xFFFF:w
cmp.lt (8|NM) r6.0<1>:uw r7.0<8;8,1>:f 0x3F800000:f
oword_write.s0 (1|NM) r1.0<0;1,0>:d r8.0<1>:d 0x20:ud
atomic.inc.s0 (16|M0) r9.0<1>:ud r10.0<8;8,1>:d
simd_if (8|M0) r2.0<8;8,1>:uw
simd_end (8|M0)
";

    #[test]
    fn round_trips() {
        let p = parse_program(TEXT).unwrap();
        assert_eq!(p.params.len(), 2);
        assert_eq!(p.arg_addrs, vec![None, Some(32)]);
        assert_eq!(p.insts.len(), 7);
        assert_eq!(p.to_string(), TEXT);
        assert_eq!(p.insts[1].srcs[1], Src::Imm { value: Num::Int(-1), ty: ElemType::W });
        assert_eq!(p.insts[2].srcs[1], Src::Imm { value: Num::Float(1.0), ty: ElemType::F });
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_program(".kernel k\nfrob (8|M0) r1.0<1>:d\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.msg.contains("frob"));
        let e = parse_program(".kernel k\nmov (8|M0) r1.40<1>:d r2.0<8;8,1>:d\n").unwrap_err();
        assert!(e.msg.contains("subregister"), "{e}");
        assert!(parse_program("mov (8|M0) r1.0<1>:d r2.0<8;8,1>:d\n").is_err());
    }

    #[test]
    fn several_programs() {
        let text = format!("{TEXT}\n.kernel second\nmov (1|M0) r1.0<1>:d 0x1:d\n");
        let ps = parse_programs(&text).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].to_string(), TEXT);
        assert_eq!(ps[1].name, "second");
        let e = parse_programs(&format!("{TEXT}.kernel b\nfrob\n")).unwrap_err();
        assert_eq!(e.line, 12);
    }
}
