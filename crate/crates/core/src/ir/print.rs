use std::fmt::{self, Write};

use super::{Inst, Module, Op, Param};
use crate::types::{Num, Vector};

fn fmt_num(n: Num) -> String {
    match n {
        Num::Int(i) => i.to_string(),
        Num::Float(x) => format!("{x:?}"),
    }
}

pub(crate) fn fmt_const(v: &Vector) -> String {
    if v.len() > 1 && v.is_splat() {
        return format!("splat({})", fmt_num(v.get(0)));
    }
    let items: Vec<String> = v.nums().into_iter().map(fmt_num).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_op(module: &Module, inst: &Inst) -> String {
    let surf = |s: &u32| match module.params.get(*s as usize) {
        Some(p) => format!("s{}:{}", s, p.name()),
        None => format!("s{s}"),
    };
    match &inst.op {
        Op::Const(v) => format!("const {}", fmt_const(v)),
        Op::Arg(i) => format!("arg {i}"),
        Op::ThreadX => "thread_x".into(),
        Op::ThreadY => "thread_y".into(),
        Op::Binary(op, a, b) => format!("{} {a}, {b}", op.mnemonic()),
        Op::Cmp(rel, a, b) => format!("cmp.{} {a}, {b}", rel.mnemonic()),
        Op::Sel(m, a, b) => format!("sel {m}, {a}, {b}"),
        Op::Mov(a) => format!("mov {a}"),
        Op::Any(a) => format!("any {a}"),
        Op::All(a) => format!("all {a}"),
        Op::RdRegion { src, region } => format!(
            "rdregion {src} <{};{},{}> off={}",
            region.vstride, region.width, region.hstride, region.offset_bytes
        ),
        Op::WrRegion { old, new, region, pred } => {
            let mut s = format!(
                "wrregion {old}, {new} <{};{},{}> off={}",
                region.vstride, region.width, region.hstride, region.offset_bytes
            );
            if let Some(p) = pred {
                let _ = write!(s, " pred {p}");
            }
            s
        }
        Op::ISelect { src, idx } => format!("iselect {src}, {idx}"),
        Op::MediaRead { surf: s, x, y, rows } => format!("media_read {}, {x}, {y} rows={rows}", surf(s)),
        Op::MediaWrite { surf: s, x, y, rows, data } => {
            format!("media_write {}, {x}, {y}, {data} rows={rows}", surf(s))
        }
        Op::OwordRead { surf: s, offset } => format!("oword_read {}, {offset}", surf(s)),
        Op::OwordWrite { surf: s, offset, data } => format!("oword_write {}, {offset}, {data}", surf(s)),
        Op::ScatterRead { surf: s, global, offsets } => {
            format!("scatter_read {}, {global}, {offsets}", surf(s))
        }
        Op::ScatterWrite { surf: s, global, offsets, data } => {
            format!("scatter_write {}, {global}, {offsets}, {data}", surf(s))
        }
        Op::Atomic { op, surf: s, offsets, src0, src1 } => {
            let mut t = format!("atomic.{op} {}, {offsets}", surf(s));
            for v in src0.iter().chain(src1) {
                let _ = write!(t, ", {v}");
            }
            t
        }
        Op::SimdIf(m) => format!("simd_if {m}"),
        Op::SimdElse => "simd_else".into(),
        Op::SimdEnd => "simd_end".into(),
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| match p {
                Param::Surface { name } => format!("surface {name}"),
                Param::Scalar { name, ty } => format!("{ty} {name}"),
            })
            .collect();
        writeln!(f, "kernel {}({}) {{", self.name, params.join(", "))?;
        let mut depth = 1usize;
        for inst in &self.insts {
            if matches!(inst.op, Op::SimdElse | Op::SimdEnd) {
                depth = depth.saturating_sub(1);
            }
            let pad = "  ".repeat(depth);
            let body = fmt_op(self, inst);
            match inst.ty {
                Some(ty) => writeln!(f, "{pad}{} = {body} : {ty}", inst.id)?,
                None => writeln!(f, "{pad}{body}")?,
            }
            if matches!(inst.op, Op::SimdIf(_) | Op::SimdElse) {
                depth += 1;
            }
        }
        writeln!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use crate::ir::{Builder, Op, Param};
    use crate::region::Region;
    use crate::types::{ElemType, Vector};

    #[test]
    fn prints_one_instruction_per_line() {
        let mut b = Builder::new("k", vec![Param::Surface { name: "buf".into() }]);
        let a = b.konst(Vector::from_i64s(ElemType::D, &[0, 1, 2, 3, 4, 5, 6, 7]));
        let r = b.value(Op::RdRegion { src: a, region: Region::new(8, 4, 2, 4, 4) }, ElemType::D, 4);
        let z = b.konst(Vector::zeroed(ElemType::D, 1));
        b.effect(Op::OwordWrite { surf: 0, offset: z, data: r });
        let text = b.finish().to_string();
        let expected = "kernel k(surface buf) {\n  %0 = const [0, 1, 2, 3, 4, 5, 6, 7] : d x8\n  \
                        %1 = rdregion %0 <8;4,2> off=4 : d x4\n  %2 = const [0] : d x1\n  \
                        oword_write s0:buf, %2, %1\n}\n";
        assert_eq!(text, expected);
    }
}
