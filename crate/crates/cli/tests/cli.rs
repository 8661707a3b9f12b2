use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cmc_core::corpus::linear_filter;
use cmc_core::types::ElemType;
use cmc_core::visa::{parse_programs, Opcode};

fn cmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmc")).args(args).output().expect("cmc runs")
}

fn corpus(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(file)
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn image(w: usize, h: usize) -> Vec<u8> {
    (0..w * h).map(|k| ((k * 37 + k / w * 11) % 251) as u8).collect()
}

/// Compiles the linear filter into `dir` and returns the assembly path.
fn compile_linear(dir: &Path) -> PathBuf {
    let out = dir.join("linear.visa");
    let o = cmc(&["compile", corpus("linear.cmk").to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    out
}

#[test]
fn compile_emits_nine_simd16_movs_for_the_first_statement() {
    let dir = tempfile::tempdir().unwrap();
    let asm = fs::read_to_string(compile_linear(dir.path())).unwrap();
    let progs = parse_programs(&asm).unwrap();
    assert_eq!(progs.len(), 1);
    let movs: Vec<_> = progs[0]
        .insts
        .iter()
        .filter(|i| i.op == Opcode::Mov && i.dst.map(|d| d.ty) == Some(ElemType::F) && i.srcs[0].ty() == ElemType::Ub)
        .collect();
    assert!(movs.len() >= 9);
    assert!(movs[..9].iter().all(|i| i.exec == 16), "{asm}");
}

#[test]
fn compile_to_stdout_with_stats() {
    let o = cmc(&["compile", corpus("simd_if.cmk").to_str().unwrap(), "-o", "-", "--stats", "-O", "0"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let all = text(&o.stdout) + &text(&o.stderr);
    assert!(all.contains(".kernel simd_if"), "{all}");
    assert!(all.contains("simd_if (") && all.contains("simd_end"), "{all}");
    assert!(all.lines().any(|l| l.starts_with("opt.insts_before=")), "{all}");
    assert!(all.lines().any(|l| l.contains("grfs=")), "{all}");
}

#[test]
fn compile_reports_diagnostics_with_positions() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cmk");
    fs::write(&bad, "kernel k(SurfaceIndex s) {\n  vector<int,8> v;\n  v = nope + 1;\n}\n").unwrap();
    let o = cmc(&["compile", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = text(&o.stderr);
    assert!(err.contains("bad.cmk:3:") && err.contains(": error: "), "{err}");
    assert!(!dir.path().join("bad.visa").exists());
}

#[test]
fn compile_dumps_ir_after_a_pass() {
    let o = cmc(&["compile", corpus("features.cmk").to_str().unwrap(), "-o", "-", "--print-after", "collapse"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let all = text(&o.stdout) + &text(&o.stderr);
    assert!(all.contains("collapse"), "{all}");
    let o = cmc(&["compile", corpus("features.cmk").to_str().unwrap(), "--print-after", "nope"]);
    assert!(!o.status.success());
}

#[test]
fn run_filters_an_image() {
    let dir = tempfile::tempdir().unwrap();
    let asm = compile_linear(dir.path());
    let (w, h) = (48, 24);
    let input = image(w, h);
    let (ip, op) = (dir.path().join("in.bin"), dir.path().join("out.bin"));
    fs::write(&ip, &input).unwrap();
    let o = cmc(&[
        "run",
        asm.to_str().unwrap(),
        "--surface",
        &format!("ibuf={}:48x24:image", ip.display()),
        "--surface",
        &format!("obuf={}:48x24:image", op.display()),
        "--grid",
        "2x4",
        "--stats",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(fs::read(&op).unwrap(), linear_filter(&input, w, h));
    assert!(text(&o.stdout).lines().any(|l| l.contains('=')), "{}", text(&o.stdout));
    assert_eq!(fs::read(&ip).unwrap(), input);
}

#[test]
fn run_single_thread_on_one_tile() {
    let dir = tempfile::tempdir().unwrap();
    let asm = compile_linear(dir.path());
    let input = image(24, 6);
    let (ip, op) = (dir.path().join("in.bin"), dir.path().join("out.bin"));
    fs::write(&ip, &input).unwrap();
    let o = cmc(&[
        "run",
        asm.to_str().unwrap(),
        "--surface",
        &format!("ibuf={}:24x6:image", ip.display()),
        "--surface",
        &format!("obuf={}:24x6:image", op.display()),
        "--grid",
        "1x1",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(fs::read(&op).unwrap(), linear_filter(&input, 24, 6));
}

#[test]
fn run_rejects_bad_bindings() {
    let dir = tempfile::tempdir().unwrap();
    let asm = compile_linear(dir.path());
    let ip = dir.path().join("in.bin");
    fs::write(&ip, image(48, 24)).unwrap();
    let ibuf = format!("ibuf={}:48x24:image", ip.display());

    let o = cmc(&["run", asm.to_str().unwrap(), "--surface", &ibuf, "--grid", "2x4"]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("obuf"), "{}", text(&o.stderr));

    let extra = format!("zz={}:16:buffer", ip.display());
    let o = cmc(&["run", asm.to_str().unwrap(), "--surface", &ibuf, "--surface", &extra]);
    assert!(!o.status.success());
    assert!(text(&o.stderr).contains("zz"), "{}", text(&o.stderr));

    let wrong = format!("ibuf={}:40x24:image", ip.display());
    let o = cmc(&["run", asm.to_str().unwrap(), "--surface", &wrong, "--surface", "obuf=/nonexistent/x:48x24:image"]);
    assert!(!o.status.success());
}

#[test]
fn test_subcommand_reports_json() {
    let o = cmc(&["test", "--json", "--seeds", "2"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["pass"], true);
    let cases = v["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 10);
    for c in cases {
        assert_eq!(c["pass"], true, "{c}");
        assert_eq!(c["o0_equals_o2"], true, "{c}");
        assert_eq!(c["seeds"], 2);
        for level in ["O0", "O2"] {
            assert!(c[level]["instructions"].as_u64().unwrap() > 0, "{c}");
            assert!(c[level]["grfs"].as_u64().unwrap() <= 128, "{c}");
        }
    }
}

#[test]
fn test_subcommand_filters_cases() {
    let o = cmc(&["test", "--case", "histogram", "--case", "transpose2"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("histogram") && out.contains("transpose2") && !out.contains("bitonic"), "{out}");
    let o = cmc(&["test", "--case", "nope"]);
    assert!(!o.status.success());
}
