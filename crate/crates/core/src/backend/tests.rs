use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;
use crate::dispatch::DispatchSpec;
use crate::emu;
use crate::frontend::compile_source;
use crate::ir::{eval_dispatch, Builder, Op, Param};
use crate::memory::Surface;
use crate::opt::{optimize, OptLevel};
use crate::region::Region;
use crate::types::{BinOp, CmpRel, ElemType, Vector};
use crate::visa::{MaskCtl, Src};

fn lower(src: &str, level: OptLevel) -> Module {
    let m = compile_source(src).unwrap_or_else(|e| panic!("{e}")).remove(0);
    optimize(&m, level).0
}

fn asm(m: &Module) -> (Program, BackendStats) {
    compile(m, &MachineConfig::default()).unwrap_or_else(|e| panic!("{e}\n{m}"))
}

/// Buffers (or images, when `image` is set) of random bytes for every surface.
fn random_spec(m: &Module, seed: u64, grid: (u32, u32), image: Option<(usize, usize)>) -> DispatchSpec {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut spec = DispatchSpec::new(grid.0, grid.1);
    for p in &m.params {
        match p {
            Param::Surface { name } => {
                let s = match image {
                    Some((w, h)) => Surface::image(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap(),
                    None => Surface::buffer((0..1024).map(|_| rng.gen()).collect()),
                };
                spec = spec.surface(name, s);
            }
            Param::Scalar { name, .. } => spec = spec.arg(name, rng.gen_range(0..8)),
        }
    }
    spec
}

fn assert_same(m: &Module, p: &Program, spec: &DispatchSpec) {
    let want = eval_dispatch(m, spec).unwrap_or_else(|e| panic!("{e}\n{m}"));
    let (got, _) = emu::dispatch(p, spec).unwrap_or_else(|e| panic!("{e}\n{p}"));
    assert_eq!(got, want, "IR:\n{m}\nassembly:\n{p}");
}

const LINEAR: &str = "kernel linear(SurfaceIndex ibuf, SurfaceIndex obuf) {
    matrix<uchar,8,32> in; matrix<uchar,6,24> out; matrix<float,6,24> m;
    int h = thread_x() * 24; int v = thread_y() * 6;
    read(ibuf, h, v, in);
    m = in.select<6,1,24,1>(1,3);
    m += in.select<6,1,24,1>(0,0);
    m += in.select<6,1,24,1>(0,3);
    m += in.select<6,1,24,1>(0,6);
    m += in.select<6,1,24,1>(1,0);
    m += in.select<6,1,24,1>(1,6);
    m += in.select<6,1,24,1>(2,0);
    m += in.select<6,1,24,1>(2,3);
    m += in.select<6,1,24,1>(2,6);
    out = m * 0.1111f;
    write(obuf, h, v, out);
}";

#[test]
fn select_convert_becomes_nine_simd16_movs() {
    let (p, _) = asm(&lower(LINEAR, OptLevel::O2));
    let movs: Vec<&visa::Inst> = p
        .insts
        .iter()
        .filter(|i| i.op == Opcode::Mov && i.dst.map(|d| d.ty) == Some(ElemType::F))
        .filter(|i| i.srcs[0].ty() == ElemType::Ub)
        .collect();
    // One group of nine per select; the first statement's group comes first.
    assert_eq!(movs.len(), 81, "{p}");
    let expect = [(3, 8), (19, 16), (11, 8)];
    for (k, i) in movs.iter().take(9).enumerate() {
        assert_eq!(i.exec, 16);
        assert_eq!(i.mask, MaskCtl::Lanes(0));
        let Src::Region { addr, v, w, h, .. } = i.srcs[0] else { panic!() };
        let (sub, vs) = expect[k % 3];
        assert_eq!((addr % 32, v, w, h), (sub, vs, 8, 1), "{i}");
        assert_eq!(i.dst.unwrap().addr % 32, 0);
        assert_eq!(i.dst.unwrap().stride, 1);
    }
    assert!(redundant_movs(&p).is_empty());
}

#[test]
fn linear_filter_matches_the_ir() {
    for level in [OptLevel::O0, OptLevel::O2] {
        let m = lower(LINEAR, level);
        let (p, stats) = asm(&m);
        assert!(stats.grfs <= 128);
        for seed in 0..3 {
            assert_same(&m, &p, &random_spec(&m, seed, (2, 4), Some((48, 24))));
        }
    }
}

#[test]
fn byte_arithmetic_is_widened() {
    let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
    let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
    let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::Ub, 16);
    let lo = b.value(Op::RdRegion { src: x, region: Region::new(8, 8, 1, 0, 8) }, ElemType::Ub, 8);
    let hi = b.value(Op::RdRegion { src: x, region: Region::new(8, 8, 1, 8, 8) }, ElemType::Ub, 8);
    let s = b.value(Op::Binary(BinOp::Add, lo, hi), ElemType::Ub, 8);
    let w = b.value(Op::WrRegion { old: x, new: s, region: Region::new(8, 8, 1, 0, 8), pred: None }, ElemType::Ub, 16);
    b.effect(Op::OwordWrite { surf: 0, offset: z, data: w });
    let m = b.finish();
    let (p, stats) = asm(&m);
    assert_eq!(stats.promoted, 1);
    let text = p.to_string();
    let add = p.insts.iter().position(|i| i.op == Opcode::Bin(BinOp::Add)).unwrap();
    assert_eq!(p.insts[add].dst.unwrap().ty, ElemType::W, "{text}");
    assert!(p.insts[add].srcs.iter().all(|s| s.ty() == ElemType::Ub), "{text}");
    let back = &p.insts[add + 1];
    assert_eq!((back.op, back.dst.unwrap().ty, back.srcs[0].ty()), (Opcode::Mov, ElemType::Ub, ElemType::W));
    for seed in 0..5 {
        assert_same(&m, &p, &random_spec(&m, seed, (1, 1), None));
    }
}

#[test]
fn shared_region_is_read_in_place_by_each_user() {
    let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
    let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
    let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::D, 16);
    let r = b.value(Op::RdRegion { src: x, region: Region::new(16, 8, 2, 0, 8) }, ElemType::D, 8);
    let a1 = b.value(Op::Binary(BinOp::Add, r, z), ElemType::D, 8);
    let a2 = b.value(Op::Binary(BinOp::Mul, r, a1), ElemType::D, 8);
    b.effect(Op::OwordWrite { surf: 0, offset: z, data: a2 });
    let m = b.finish();
    let (p, stats) = asm(&m);
    assert_eq!(stats.cloned, 1);
    assert!(p.insts.iter().all(|i| i.op != Opcode::Mov), "{p}");
    let strided = |i: &visa::Inst| matches!(i.srcs[0], Src::Region { v: 16, w: 8, h: 2, .. });
    assert!(p.insts.iter().filter(|i| matches!(i.op, Opcode::Bin(_))).all(strided), "{p}");
    assert_same(&m, &p, &random_spec(&m, 1, (1, 1), None));
}

#[test]
fn disjoint_lifetimes_share_registers() {
    let m = lower(
        "kernel k(SurfaceIndex buf) {
            vector<int,16> a; read(buf, 0, a); write(buf, 64, a * 2);
            vector<int,16> b; read(buf, 128, b); write(buf, 192, b + 1);
        }",
        OptLevel::O2,
    );
    let (p, _) = asm(&m);
    let reads: Vec<u32> = p.insts.iter().filter(|i| matches!(i.op, Opcode::OwordRead(_))).map(|i| i.dst.unwrap().addr).collect();
    assert_eq!(reads.len(), 2, "{p}");
    assert_eq!(reads[0], reads[1], "{p}");
    assert_same(&m, &p, &random_spec(&m, 3, (1, 1), None));
}

#[test]
fn two_large_matrices_exhaust_the_register_file() {
    let m = lower(
        "kernel big(SurfaceIndex buf) {
            matrix<float,32,32> a; matrix<float,32,32> b;
            read(buf, 0, a); read(buf, 4096, b);
            a += b;
            write(buf, 0, a);
        }",
        OptLevel::O2,
    );
    let err = compile(&m, &MachineConfig::default()).unwrap_err();
    let BackendError::Pressure { needed, available, ref live, .. } = err else { panic!("{err}") };
    assert!(needed > available);
    assert_eq!(available, 4096);
    assert!(live.iter().any(|l| l.contains("f x1024")), "{err}");
    assert!(err.to_string().contains("register pressure"));
}

#[test]
fn oversized_operands_are_rejected_by_the_validator() {
    let mut p = Program { name: "k".into(), params: vec![], arg_addrs: vec![], insts: vec![] };
    p.insts.push(visa::Inst::new(
        Opcode::Mov,
        32,
        MaskCtl::Lanes(0),
        Some(visa::Dst { addr: 64, stride: 1, ty: ElemType::F }),
        vec![Src::Region { addr: 256, v: 8, w: 8, h: 1, ty: ElemType::F }],
    ));
    assert!(visa::validate(&p, &MachineConfig::default()).is_err());
}

const MIXED: &str = "kernel k(SurfaceIndex buf, int n) {
    vector<int,16> a; vector<int,32> acc = 0;
    read(buf, 0, a);
    vector<int,8> c = {1,2,3,4,5,6,7,8};
    acc.select<16,1>(0) = a + c.select<4,2>(1).replicate<4>();
    acc.select<16,1>(16) = a.select<8,2>(0).select<4,2>(1).replicate<4>();
    simd_if (a > n) { a += 3; } simd_else { a = 0; }
    acc.select<16,1>(0) += a;
    vector<short,16> s = a.format<short>().select<16,2>(0);
    vector<uint,16> off = (a & 15) * 4;
    vector<int,16> g; read(buf, 256, off, g);
    vector<uint,16> old = write_atomic<add>(buf, off + 512, off);
    if ((g > 0).any()) { acc.select<16,1>(16) += g; }
    write(buf, 64, acc.select<16,1>(0));
    write(buf, 128, acc.select<16,1>(16));
    write(buf, 192, s);
    write(buf, 640, old);
}";

#[test]
fn assembly_matches_the_ir_on_random_inputs() {
    for level in [OptLevel::O0, OptLevel::O2] {
        let m = lower(MIXED, level);
        let (p, _) = asm(&m);
        assert!(redundant_movs(&p).is_empty(), "{p}");
        for seed in 0..20 {
            assert_same(&m, &p, &random_spec(&m, seed, (2, 1), None));
        }
    }
}

#[test]
fn compilation_is_deterministic() {
    let m = lower(MIXED, OptLevel::O2);
    let a = asm(&m).0.to_string();
    let b = asm(&m).0.to_string();
    assert_eq!(a, b);
}

#[test]
fn value_from_the_then_branch_survives_the_else_branch() {
    // w1 (then) is read again after w2 (else) updated it.
    let mut b = Builder::new("k", vec![Param::Surface { name: "s".into() }]);
    let z = b.konst(Vector::from_i64s(ElemType::D, &[0]));
    let x = b.value(Op::OwordRead { surf: 0, offset: z }, ElemType::D, 8);
    let c = b.value(Op::Cmp(CmpRel::Gt, x, z), ElemType::Uw, 8);
    let v0 = b.konst(Vector::from_i64s(ElemType::D, &[5; 8]));
    let v0 = b.value(Op::Mov(v0), ElemType::D, 8);
    b.effect(Op::SimdIf(c));
    let w1 = b.value(Op::WrRegion { old: v0, new: x, region: Region::identity(8), pred: None }, ElemType::D, 8);
    b.effect(Op::SimdElse);
    let nine = b.konst(Vector::from_i64s(ElemType::D, &[9; 8]));
    let w2 = b.value(Op::WrRegion { old: w1, new: nine, region: Region::identity(8), pred: None }, ElemType::D, 8);
    b.effect(Op::SimdEnd);
    let r = b.value(Op::Binary(BinOp::Add, w1, w2), ElemType::D, 8);
    let off = b.konst(Vector::from_i64s(ElemType::D, &[32]));
    b.effect(Op::OwordWrite { surf: 0, offset: off, data: r });
    let m = b.finish();
    crate::ir::verify(&m).unwrap();
    let (p, stats) = asm(&m);
    assert!(stats.copies >= 2, "{p}");
    for seed in 0..10 {
        assert_same(&m, &p, &random_spec(&m, seed, (1, 1), None));
    }
}
