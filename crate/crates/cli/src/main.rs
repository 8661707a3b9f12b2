use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use cmc_core::backend;
use cmc_core::corpus::{self, Case, Surfaces};
use cmc_core::dispatch::DispatchSpec;
use cmc_core::emu;
use cmc_core::frontend::compile_source;
use cmc_core::ir::Param;
use cmc_core::memory::Surface;
use cmc_core::opt::{optimize_with, OptLevel, Pass, PassConfig};
use cmc_core::visa::{parse_programs, MachineConfig, Program};

#[derive(Parser)]
#[command(name = "cmc", version, about = "Explicit-SIMD kernel compiler and GPU thread emulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a .cmk source file to assembly.
    Compile(CompileArgs),
    /// Run an assembled kernel over a thread grid.
    Run(RunArgs),
    /// Check the built-in kernel corpus against its scalar oracles.
    Test(TestArgs),
}

#[derive(Args)]
struct CompileArgs {
    input: PathBuf,
    /// Optimization level: 0 or 2.
    #[arg(short = 'O', default_value = "2", value_parser = parse_level)]
    opt: OptLevel,
    /// Output file; `-` for stdout. Defaults to the input with a .visa extension.
    #[arg(short = 'o')]
    output: Option<PathBuf>,
    /// Print the optimized IR.
    #[arg(long)]
    dump_ir: bool,
    /// Print the IR after every run of the named pass (or `all`).
    #[arg(long, value_name = "PASS")]
    print_after: Option<String>,
    /// Print the assembly to stdout as well.
    #[arg(long)]
    dump_asm: bool,
    /// Print pass and code generation statistics.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct RunArgs {
    input: PathBuf,
    /// `name=path:WxH:image` or `name=path:N:buffer`.
    #[arg(long = "surface", value_name = "BINDING")]
    surfaces: Vec<String>,
    /// Thread grid as WxH.
    #[arg(long, default_value = "1x1", value_parser = parse_grid)]
    grid: (u32, u32),
    /// Scalar kernel argument as name=value.
    #[arg(long = "arg", value_name = "NAME=VALUE")]
    args: Vec<String>,
    /// Kernel to run when the file holds several.
    #[arg(long)]
    kernel: Option<String>,
    /// Print execution statistics.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct TestArgs {
    /// Only run the named cases.
    #[arg(long = "case", value_name = "NAME")]
    cases: Vec<String>,
    /// Number of seeded inputs per case.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

fn parse_level(s: &str) -> Result<OptLevel, String> {
    match s {
        "0" => Ok(OptLevel::O0),
        "2" => Ok(OptLevel::O2),
        _ => Err(format!("unsupported optimization level `{s}` (use 0 or 2)")),
    }
}

fn parse_grid(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once('x').ok_or_else(|| format!("grid `{s}` is not WxH"))?;
    let n = |t: &str| t.parse::<u32>().ok().filter(|&v| v > 0).ok_or_else(|| format!("bad grid dimension `{t}`"));
    Ok((n(w)?, n(h)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Command::Compile(a) => compile(a),
        Command::Run(a) => run(a),
        Command::Test(a) => test(a),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn compile(a: CompileArgs) -> Result<bool> {
    let src = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let file = a.input.display().to_string();
    let modules = match compile_source(&src) {
        Ok(m) => m,
        Err(d) => {
            eprintln!("{}", d.render(&file));
            return Ok(false);
        }
    };
    let print_after: Option<Vec<Pass>> = match a.print_after.as_deref() {
        None => None,
        Some("all") => Some(Pass::ALL.to_vec()),
        Some(p) => Some(vec![p.parse::<Pass>().map_err(|e| anyhow!(e))?]),
    };
    let cfg = MachineConfig::default();
    let mut text = String::new();
    for m in &modules {
        let (opt, ostats) = optimize_with(m, &PassConfig::new(a.opt), |pass, iter, cur| {
            if print_after.as_ref().is_some_and(|ps| ps.contains(&pass)) {
                println!("; {} after {pass} (iteration {})\n{cur}", m.name, iter + 1);
            }
        });
        if a.dump_ir {
            println!("; {} optimized IR\n{opt}", m.name);
        }
        let (program, bstats) = backend::compile(&opt, &cfg)?;
        if a.stats {
            println!("kernel={}", m.name);
            for l in ostats.lines().into_iter().chain(bstats.lines()) {
                println!("{l}");
            }
        }
        text.push_str(&program.to_string());
    }
    if a.dump_asm {
        print!("{text}");
    }
    match a.output {
        Some(p) if p.as_os_str() == "-" => print!("{text}"),
        out => {
            let path = out.unwrap_or_else(|| a.input.with_extension("visa"));
            fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(true)
}

struct Binding {
    name: String,
    path: PathBuf,
    surface: Surface,
    original: Option<Vec<u8>>,
}

fn parse_binding(spec: &str) -> Result<Binding> {
    let (name, rest) = spec.split_once('=').ok_or_else(|| anyhow!("binding `{spec}` is not name=path:geometry:kind"))?;
    let mut parts = rest.rsplitn(3, ':');
    let (Some(kind), Some(geom), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
        bail!("binding `{spec}` is not name=path:geometry:kind");
    };
    let path = PathBuf::from(path);
    let original = if path.exists() {
        Some(fs::read(&path).with_context(|| format!("reading {}", path.display()))?)
    } else {
        None
    };
    let surface = match kind {
        "image" => {
            let (w, h) = parse_grid(geom).map_err(|e| anyhow!("surface `{name}`: {e}"))?;
            let (w, h) = (w as usize, h as usize);
            match &original {
                Some(b) if b.len() != w * h => {
                    bail!("surface `{name}`: {} holds {} bytes, geometry {w}x{h} needs {}", path.display(), b.len(), w * h)
                }
                Some(b) => Surface::image(w, h, b.clone()).map_err(|e| anyhow!("surface `{name}`: {e}"))?,
                None => Surface::zeroed_image(w, h),
            }
        }
        "buffer" => {
            let n: usize = geom.parse().map_err(|_| anyhow!("surface `{name}`: bad buffer length `{geom}`"))?;
            match &original {
                Some(b) if b.len() != n => {
                    bail!("surface `{name}`: {} holds {} bytes, expected {n}", path.display(), b.len())
                }
                Some(b) => Surface::buffer(b.clone()),
                None => Surface::buffer(vec![0; n]),
            }
        }
        k => bail!("surface `{name}`: unknown kind `{k}` (expected image or buffer)"),
    };
    Ok(Binding { name: name.to_string(), path, surface, original })
}

fn pick_program(mut programs: Vec<Program>, kernel: Option<&str>, file: &Path) -> Result<Program> {
    match kernel {
        Some(k) => {
            let i = programs.iter().position(|p| p.name == k);
            i.map(|i| programs.swap_remove(i)).ok_or_else(|| anyhow!("{} has no kernel `{k}`", file.display()))
        }
        None if programs.len() == 1 => Ok(programs.remove(0)),
        None => {
            let names: Vec<&str> = programs.iter().map(|p| p.name.as_str()).collect();
            bail!("{} holds several kernels ({}); choose one with --kernel", file.display(), names.join(", "))
        }
    }
}

fn run(a: RunArgs) -> Result<bool> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let programs = parse_programs(&text).map_err(|e| anyhow!("{}:{e}", a.input.display()))?;
    let program = pick_program(programs, a.kernel.as_deref(), &a.input)?;
    cmc_core::visa::validate(&program, &MachineConfig::default())
        .map_err(|v| anyhow!("{}", v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")))?;

    let bindings: Vec<Binding> = a.surfaces.iter().map(|s| parse_binding(s)).collect::<Result<_>>()?;
    let mut spec = DispatchSpec::new(a.grid.0, a.grid.1);
    for b in &bindings {
        if spec.surfaces.contains_key(&b.name) {
            bail!("surface `{}` bound twice", b.name);
        }
        spec = spec.surface(&b.name, b.surface.clone());
    }
    for arg in &a.args {
        let (n, v) = arg.split_once('=').ok_or_else(|| anyhow!("argument `{arg}` is not name=value"))?;
        let v: i64 = v.parse().map_err(|_| anyhow!("argument `{n}`: `{v}` is not an integer"))?;
        spec = spec.arg(n, v);
    }
    for p in &program.params {
        match p {
            Param::Surface { name } if !spec.surfaces.contains_key(name) => {
                bail!("kernel `{}` needs a binding for surface `{name}` (--surface {name}=PATH:GEOMETRY:KIND)", program.name)
            }
            Param::Scalar { name, .. } if !spec.args.contains_key(name) => {
                bail!("kernel `{}` needs a value for `{name}` (--arg {name}=VALUE)", program.name)
            }
            _ => {}
        }
    }
    for name in spec.surfaces.keys() {
        if !program.params.iter().any(|p| matches!(p, Param::Surface { name: n } if n == name)) {
            bail!("kernel `{}` has no surface parameter `{name}`", program.name);
        }
    }

    let (out, stats) = emu::dispatch(&program, &spec)?;
    for b in &bindings {
        let bytes = out[&b.name].bytes();
        if b.original.as_deref() != Some(bytes) {
            fs::write(&b.path, bytes).with_context(|| format!("writing {}", b.path.display()))?;
        }
    }
    if a.stats {
        for l in stats.lines() {
            println!("{l}");
        }
    }
    Ok(true)
}

/// Verdict for one case at one optimization level.
struct LevelResult {
    instructions: usize,
    grfs: u32,
    failure: Option<String>,
    outputs: Vec<Surfaces>,
}

fn check_level(case: &Case, level: OptLevel, seeds: u64) -> LevelResult {
    let built = match corpus::build(case, level, &MachineConfig::default()) {
        Ok(b) => b,
        Err(e) => return LevelResult { instructions: 0, grfs: 0, failure: Some(e), outputs: vec![] },
    };
    let grfs = built.programs.values().map(|(_, s)| s.grfs).max().unwrap_or(0);
    let mut res = LevelResult { instructions: built.instructions(), grfs, failure: None, outputs: vec![] };
    for seed in 0..seeds {
        let inputs = case.inputs(seed);
        let want = case.expected(&inputs);
        match corpus::run_asm(case, &built, &inputs) {
            Ok((got, _)) => {
                if let Some(d) = corpus::first_difference(&got, &want) {
                    res.failure = Some(format!("seed {seed}: {d}"));
                    return res;
                }
                res.outputs.push(got);
            }
            Err(e) => {
                res.failure = Some(format!("seed {seed}: {e}"));
                return res;
            }
        }
    }
    res
}

fn test(a: TestArgs) -> Result<bool> {
    let all = corpus::cases();
    for n in &a.cases {
        if !all.iter().any(|c| &c.name == n) {
            let names: Vec<&str> = all.iter().map(|c| c.name).collect();
            bail!("unknown case `{n}` (available: {})", names.join(", "));
        }
    }
    let selected: Vec<Case> = all.into_iter().filter(|c| a.cases.is_empty() || a.cases.iter().any(|n| n == c.name)).collect();
    let results: Vec<(LevelResult, LevelResult)> = std::thread::scope(|s| {
        let handles: Vec<_> = selected
            .iter()
            .map(|c| s.spawn(move || (check_level(c, OptLevel::O0, a.seeds), check_level(c, OptLevel::O2, a.seeds))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("case thread panicked")).collect()
    });

    let mut all_pass = true;
    let mut report = Vec::new();
    for (c, (o0, o2)) in selected.iter().zip(&results) {
        let same = o0.failure.is_none() && o2.failure.is_none() && o0.outputs == o2.outputs;
        let pass = o0.failure.is_none() && o2.failure.is_none() && same;
        all_pass &= pass;
        let level = |r: &LevelResult| {
            json!({ "instructions": r.instructions, "grfs": r.grfs, "pass": r.failure.is_none(), "error": r.failure })
        };
        report.push(json!({
            "name": c.name,
            "file": c.file,
            "seeds": a.seeds,
            "O0": level(o0),
            "O2": level(o2),
            "o0_equals_o2": same,
            "pass": pass,
        }));
        if !a.json {
            let verdict = |r: &LevelResult| if r.failure.is_none() { "pass" } else { "FAIL" };
            println!(
                "{:<12} O0 {} ({} insts)  O2 {} ({} insts)  O0=O2 {}",
                c.name,
                verdict(o0),
                o0.instructions,
                verdict(o2),
                o2.instructions,
                if same { "pass" } else { "FAIL" }
            );
            for (tag, r) in [("O0", o0), ("O2", o2)] {
                if let Some(f) = &r.failure {
                    println!("  {tag}: {f}");
                }
            }
        }
    }
    if a.json {
        let doc: Value = json!({ "cases": report, "pass": all_pass });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        let failed = report.iter().filter(|r| r["pass"] == false).count();
        println!("{} cases, {} failed", report.len(), failed);
    }
    Ok(all_pass)
}
