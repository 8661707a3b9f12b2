use super::typed::*;
use crate::ir::{Builder, Inst, Module, Op, Ty, ValueId};
use crate::region::Region;
use crate::types::{ElemType, Vector};

/// Lowers a checked kernel to SSA form. Variables become chains of values;
/// inside a `simd_if` every variable update is a `wrregion` over the previous
/// value, so updates made under a mask merge with the untouched lanes.
pub fn lower(k: &TKernel) -> Module {
    let mut l = Lower { b: Builder::new(&k.name, k.params.clone()), kernel: k, vals: vec![None; k.vars.len()], depth: 0, hoisted: 0 };
    l.stmts(&k.body);
    l.b.finish()
}

struct Lower<'a> {
    b: Builder,
    kernel: &'a TKernel,
    vals: Vec<Option<ValueId>>,
    /// Number of enclosing `simd_if` bodies.
    depth: usize,
    /// Zero constants placed at the top of the kernel.
    hoisted: usize,
}

impl Lower<'_> {
    fn ty(shape: Shape) -> Ty {
        Ty::new(shape.elem, shape.len())
    }

    /// Current value of a variable. A variable read before any write is
    /// zero; the constant goes at the top so it dominates every use.
    fn current(&mut self, var: VarId) -> ValueId {
        if let Some(v) = self.vals[var] {
            return v;
        }
        let shape = self.kernel.vars[var].shape;
        let id = self.b.fresh();
        let inst = Inst { id, ty: Some(Self::ty(shape)), op: Op::Const(Vector::zeroed(shape.elem, shape.len() as usize)) };
        self.b.module.insts.insert(self.hoisted, inst);
        self.hoisted += 1;
        self.vals[var] = Some(id);
        id
    }

    fn stmts(&mut self, body: &[TStmt]) {
        for s in body {
            self.stmt(s);
        }
    }

    fn stmt(&mut self, s: &TStmt) {
        match s {
            TStmt::Assign { place, value, pred } => {
                let v = self.expr(value);
                let p = pred.as_ref().map(|p| self.expr(p));
                self.write(place, v, value.shape, p);
            }
            TStmt::MediaRead { surf, x, y, rows, place } => {
                let (x, y) = (self.expr(x), self.expr(y));
                let v = self.b.push(Op::MediaRead { surf: *surf, x, y, rows: *rows }, Some(Self::ty(place.shape)));
                self.write(place, v, place.shape, None);
            }
            TStmt::MediaWrite { surf, x, y, rows, data } => {
                let (x, y, d) = (self.expr(x), self.expr(y), self.expr(data));
                self.b.effect(Op::MediaWrite { surf: *surf, x, y, rows: *rows, data: d });
            }
            TStmt::OwordRead { surf, offset, place } => {
                let o = self.expr(offset);
                let v = self.b.push(Op::OwordRead { surf: *surf, offset: o }, Some(Self::ty(place.shape)));
                self.write(place, v, place.shape, None);
            }
            TStmt::OwordWrite { surf, offset, data } => {
                let (o, d) = (self.expr(offset), self.expr(data));
                self.b.effect(Op::OwordWrite { surf: *surf, offset: o, data: d });
            }
            TStmt::ScatterRead { surf, global, offsets, place } => {
                let (g, o) = (self.expr(global), self.expr(offsets));
                let v = self.b.push(Op::ScatterRead { surf: *surf, global: g, offsets: o }, Some(Self::ty(place.shape)));
                self.write(place, v, place.shape, None);
            }
            TStmt::ScatterWrite { surf, global, offsets, data } => {
                let (g, o, d) = (self.expr(global), self.expr(offsets), self.expr(data));
                self.b.effect(Op::ScatterWrite { surf: *surf, global: g, offsets: o, data: d });
            }
            TStmt::Eval(e) => {
                self.expr(e);
            }
            TStmt::SimdIf { cond, then, els } => {
                let c = self.expr(cond);
                self.b.effect(Op::SimdIf(c));
                self.depth += 1;
                self.stmts(then);
                if let Some(els) = els {
                    self.b.effect(Op::SimdElse);
                    self.stmts(els);
                }
                self.depth -= 1;
                self.b.effect(Op::SimdEnd);
            }
        }
    }

    /// Widens a scalar to `len` lanes.
    fn splat(&mut self, v: ValueId, shape: Shape, len: u32) -> ValueId {
        if shape.len() == len {
            return v;
        }
        if let Some(Op::Const(c)) = self.op_of(v) {
            let c = Vector::splat(c.ty, c.get(0), len as usize);
            return self.b.konst(c);
        }
        self.b.value(Op::RdRegion { src: v, region: Region::broadcast(0, len) }, shape.elem, len)
    }

    fn op_of(&self, v: ValueId) -> Option<&Op> {
        self.b.module.insts.iter().rev().find(|i| i.id == v).map(|i| &i.op)
    }

    fn write(&mut self, place: &Place, v: ValueId, vshape: Shape, pred: Option<ValueId>) {
        let v = self.splat(v, vshape, place.shape.len());
        let var_shape = self.kernel.vars[place.var].shape;
        if place.levels.is_empty() && pred.is_none() && self.depth == 0 {
            self.vals[place.var] = Some(v);
            return;
        }
        let levels: Vec<Level> = if place.levels.is_empty() {
            vec![Level { region: Region::identity(var_shape.len()), elem: var_shape.elem }]
        } else {
            place.levels.clone()
        };
        // Values read at each enclosing level, outermost first.
        let mut bases = vec![self.current(place.var)];
        let mut base_ty = Self::ty(var_shape);
        let mut tys = vec![base_ty];
        for l in &levels[..levels.len() - 1] {
            let src = *bases.last().unwrap();
            base_ty = Ty::new(l.elem, l.region.len);
            bases.push(self.b.push(Op::RdRegion { src, region: l.region }, Some(base_ty)));
            tys.push(base_ty);
        }
        let mut new = v;
        let mut pred = pred;
        for (k, l) in levels.iter().enumerate().rev() {
            new = self.b.push(Op::WrRegion { old: bases[k], new, region: l.region, pred: pred.take() }, Some(tys[k]));
        }
        self.vals[place.var] = Some(new);
    }

    fn read(&mut self, place: &Place) -> ValueId {
        let mut v = self.current(place.var);
        for l in &place.levels {
            v = self.b.value(Op::RdRegion { src: v, region: l.region }, l.elem, l.region.len);
        }
        v
    }

    fn expr(&mut self, e: &TExpr) -> ValueId {
        let (elem, len) = (e.shape.elem, e.shape.len());
        match &e.kind {
            TKind::Const(c) => self.b.konst(c.clone()),
            TKind::Read(p) => self.read(p),
            TKind::Region { src, region } => {
                let s = self.expr(src);
                self.b.value(Op::RdRegion { src: s, region: *region }, elem, len)
            }
            TKind::Arg(i) => self.b.value(Op::Arg(*i), elem, 1),
            TKind::ThreadX => self.b.value(Op::ThreadX, ElemType::D, 1),
            TKind::ThreadY => self.b.value(Op::ThreadY, ElemType::D, 1),
            TKind::Convert(x) => {
                let x = self.expr(x);
                self.b.value(Op::Mov(x), elem, len)
            }
            TKind::Binary(op, a, b) => {
                let (a, b) = (self.expr(a), self.expr(b));
                self.b.value(Op::Binary(*op, a, b), elem, len)
            }
            TKind::Cmp(rel, a, b) => {
                let (a, b) = (self.expr(a), self.expr(b));
                self.b.value(Op::Cmp(*rel, a, b), ElemType::Uw, len)
            }
            TKind::Sel { mask, a, b } => {
                let (m, a, b) = (self.expr(mask), self.expr(a), self.expr(b));
                self.b.value(Op::Sel(m, a, b), elem, len)
            }
            TKind::ISelect { src, idx } => {
                let (s, i) = (self.expr(src), self.expr(idx));
                self.b.value(Op::ISelect { src: s, idx: i }, elem, len)
            }
            TKind::Any(x) => {
                let x = self.expr(x);
                self.b.value(Op::Any(x), ElemType::Uw, 1)
            }
            TKind::All(x) => {
                let x = self.expr(x);
                self.b.value(Op::All(x), ElemType::Uw, 1)
            }
            TKind::Atomic { op, surf, offsets, src0, src1 } => {
                let o = self.expr(offsets);
                let s0 = src0.as_ref().map(|s| self.expr(s));
                let s1 = src1.as_ref().map(|s| self.expr(s));
                self.b.value(Op::Atomic { op: *op, surf: *surf, offsets: o, src0: s0, src1: s1 }, ElemType::Ud, len)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use crate::dispatch::DispatchSpec;
    use crate::frontend::compile_source;
    use crate::ir::{eval_dispatch, verify};
    use crate::memory::Surface;

    fn run(body: &str, n: usize) -> Vec<i64> {
        let src = format!("kernel k(SurfaceIndex out) {{ {body} }}");
        let m = compile_source(&src).unwrap_or_else(|e| panic!("{e}")).remove(0);
        verify(&m).unwrap_or_else(|e| panic!("{e}\n{m}"));
        let spec = DispatchSpec::new(1, 1).surface("out", Surface::buffer(vec![0; n * 4]));
        let out: BTreeMap<String, Surface> = eval_dispatch(&m, &spec).unwrap_or_else(|e| panic!("{e}\n{m}"));
        out["out"].bytes().chunks(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64).collect()
    }

    #[test]
    fn straight_line_arithmetic() {
        let r = run("vector<int,8> v = {1,2,3,4,5,6,7,8}; v = v * 2 + 1; write(out, 0, v);", 8);
        assert_eq!(r, vec![3, 5, 7, 9, 11, 13, 15, 17]);
    }

    #[test]
    fn strided_writes_and_formats() {
        let r = run(
            "vector<int,8> v = 0; v.select<4,2>(1) = 7; v.format<short>().select<2,1>(0) = -1; write(out, 0, v);",
            8,
        );
        assert_eq!(r, vec![-1, 7, 0, 7, 0, 7, 0, 7]);
    }

    #[test]
    fn simd_if_merges_lanes() {
        let r = run(
            "vector<int,8> v = {0,1,2,3,4,5,6,7}; vector<int,8> r = 0;
             simd_if (v > 3) { r = 10; } simd_else { r = v; }
             write(out, 0, r);",
            8,
        );
        assert_eq!(r, vec![0, 1, 2, 3, 10, 10, 10, 10]);
    }

    #[test]
    fn nested_simd_if_and_uniform_if() {
        let r = run(
            "vector<int,8> v = {0,1,2,3,4,5,6,7}; vector<int,8> r = 0;
             simd_if (v > 1) { simd_if (v < 6) { r += 1; } r += 10; }
             if (thread_x() == 0) { r(0) = 99; } else { r(0) = 5; }
             write(out, 0, r);",
            8,
        );
        assert_eq!(r, vec![99, 0, 11, 11, 11, 11, 10, 10]);
    }

    #[test]
    fn merge_and_replicate() {
        let r = run(
            "vector<int,4> a = {1,2,3,4}; vector<int,8> b = a.replicate<2>(); b.merge(0, 0b10101010);
             write(out, 0, b);",
            8,
        );
        assert_eq!(r, vec![1, 0, 3, 0, 1, 0, 3, 0]);
    }

    #[test]
    fn variables_first_written_in_region() {
        let r = run(
            "vector<int,8> v = {0,1,2,3,4,5,6,7}; vector<int,8> r;
             simd_if (v > 5) { r = v; }
             write(out, 0, r);",
            8,
        );
        assert_eq!(r, vec![0, 0, 0, 0, 0, 0, 6, 7]);
    }
}
