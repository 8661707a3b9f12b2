use cmc_core::corpus::cases;
use cmc_core::frontend::typed::{TExpr, TKind, TStmt};
use cmc_core::frontend::{compile_source, parse, typecheck, unparse, unroll};

#[test]
fn corpus_survives_unparse() {
    for case in cases() {
        let p = parse(case.source).unwrap_or_else(|d| panic!("{}", d.render(case.file)));
        let text = unparse(&p);
        let again = parse(&text).unwrap_or_else(|d| panic!("{}\n{text}", d.render(case.file)));
        assert_eq!(again, p, "{}", case.file);
        assert_eq!(unparse(&again), text, "{}", case.file);
    }
}

fn check_expr(e: &TExpr, path: &str) {
    let n = e.shape.len();
    let fits = |x: &TExpr| x.shape.len() == n || x.shape.len() == 1;
    match &e.kind {
        TKind::Binary(_, a, b) | TKind::Cmp(_, a, b) => {
            assert!(fits(a) && fits(b), "{path}: {} vs {} and {}", n, a.shape, b.shape);
            check_expr(a, path);
            check_expr(b, path);
        }
        TKind::Sel { mask, a, b } => {
            assert!(fits(mask) && fits(a) && fits(b), "{path}: merge of {n} lanes");
            for x in [mask, a, b] {
                check_expr(x, path);
            }
        }
        TKind::Convert(x) => {
            assert!(fits(x), "{path}: conversion of {} to {n} lanes", x.shape);
            check_expr(x, path);
        }
        TKind::ISelect { src, idx } => {
            assert_eq!(idx.shape.len(), n, "{path}");
            check_expr(src, path);
            check_expr(idx, path);
        }
        TKind::Region { src, .. } | TKind::Any(src) | TKind::All(src) => check_expr(src, path),
        TKind::Atomic { offsets, src0, src1, .. } => {
            assert_eq!(offsets.shape.len(), n, "{path}");
            for s in [src0, src1].into_iter().flatten() {
                assert_eq!(s.shape.len(), n, "{path}");
            }
        }
        TKind::Const(c) => assert_eq!(c.len() as u32, n, "{path}"),
        TKind::Read(p) => assert_eq!(p.shape, e.shape, "{path}"),
        TKind::Arg(_) | TKind::ThreadX | TKind::ThreadY => assert_eq!(n, 1, "{path}"),
    }
}

fn check_stmts(body: &[TStmt], path: &str) {
    for s in body {
        match s {
            TStmt::Assign { place, value, pred } => {
                let n = place.shape.len();
                assert!(value.shape.len() == n || value.shape.len() == 1, "{path}");
                assert_eq!(value.shape.elem, place.shape.elem, "{path}: assignment needs an explicit conversion");
                check_expr(value, path);
                if let Some(p) = pred {
                    assert_eq!(p.shape.len(), n, "{path}");
                    check_expr(p, path);
                }
            }
            TStmt::SimdIf { cond, then, els } => {
                check_expr(cond, path);
                check_stmts(then, path);
                check_stmts(els.as_deref().unwrap_or(&[]), path);
            }
            TStmt::ScatterRead { offsets, place, global, .. } => {
                assert_eq!(offsets.shape.len(), place.shape.len(), "{path}");
                check_expr(offsets, path);
                check_expr(global, path);
            }
            TStmt::ScatterWrite { offsets, data, global, .. } => {
                assert_eq!(offsets.shape.len(), data.shape.len(), "{path}");
                check_expr(offsets, path);
                check_expr(data, path);
                check_expr(global, path);
            }
            TStmt::MediaRead { x, y, .. } | TStmt::MediaWrite { x, y, .. } => {
                check_expr(x, path);
                check_expr(y, path);
            }
            TStmt::OwordRead { offset, .. } => check_expr(offset, path),
            TStmt::OwordWrite { offset, data, .. } => {
                check_expr(offset, path);
                check_expr(data, path);
            }
            TStmt::Eval(e) => check_expr(e, path),
        }
    }
}

#[test]
fn checked_corpus_has_matching_shapes() {
    for case in cases() {
        for k in parse(case.source).unwrap().kernels {
            let t = typecheck(&unroll(&k).unwrap()).unwrap();
            check_stmts(&t.body, &format!("{}:{}", case.file, k.name));
        }
    }
}

#[test]
fn diagnostics_carry_positions() {
    let bad = [
        ("kernel k(SurfaceIndex s) {\n  vector<int,8> v;\n  v = w;\n}", 3, "w"),
        ("kernel k(SurfaceIndex s) {\n  vector<int,8> v;\n  vector<int,4> u = v;\n}", 3, ""),
        ("kernel k(SurfaceIndex s) {\n  vector<int,8> v = 0\n}", 3, ""),
        ("kernel k(SurfaceIndex s) {\n  vector<int,8> v;\n  v.select<4,4>(0) = 1;\n}", 3, ""),
    ];
    for (src, line, needle) in bad {
        let d = compile_source(src).unwrap_err();
        assert_eq!(d.span.line, line, "{src}\n{d}");
        assert!(d.message.contains(needle), "{d}");
        let r = d.render("bad.cmk");
        assert!(r.starts_with(&format!("bad.cmk:{line}:")) && r.contains(": error: "), "{r}");
    }
}
