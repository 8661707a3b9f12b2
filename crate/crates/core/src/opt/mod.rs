//! Vector optimizations over the region IR.

mod collapse;
mod dce;
mod decompose;
mod fold;

use std::fmt;
use std::str::FromStr;

pub use collapse::collapse_regions;
pub use dce::remove_dead_vectors;
pub use decompose::decompose_vectors;
pub use fold::fold_constants;

use crate::ir::Module;

/// Upper bound on pipeline iterations at -O2.
pub const MAX_ITERATIONS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pass {
    Fold,
    Collapse,
    Decompose,
    Dead,
}

impl Pass {
    pub const ALL: [Pass; 4] = [Pass::Fold, Pass::Collapse, Pass::Decompose, Pass::Dead];

    pub fn name(self) -> &'static str {
        match self {
            Pass::Fold => "fold",
            Pass::Collapse => "collapse",
            Pass::Decompose => "decompose",
            Pass::Dead => "dead",
        }
    }

    /// Runs the pass, returning the number of rewrites it made.
    pub fn run(self, m: &Module) -> (Module, usize) {
        match self {
            Pass::Fold => fold_constants(m),
            Pass::Collapse => collapse_regions(m),
            Pass::Decompose => decompose_vectors(m),
            Pass::Dead => remove_dead_vectors(m),
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pass {
    type Err = String;

    fn from_str(s: &str) -> Result<Pass, String> {
        Pass::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown pass `{s}` (expected fold, collapse, decompose or dead)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptLevel {
    O0,
    #[default]
    O2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PassConfig {
    pub passes: Vec<Pass>,
    pub max_iterations: usize,
}

impl PassConfig {
    pub fn new(level: OptLevel) -> PassConfig {
        let passes = match level {
            OptLevel::O0 => vec![],
            OptLevel::O2 => Pass::ALL.to_vec(),
        };
        PassConfig { passes, max_iterations: MAX_ITERATIONS }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OptStats {
    pub iterations: usize,
    pub insts_before: usize,
    pub insts_after: usize,
    /// Rewrites per pass, summed over iterations, in pipeline order.
    pub per_pass: Vec<(Pass, usize)>,
}

impl OptStats {
    /// `key=value` lines.
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("opt.iterations={}", self.iterations),
            format!("opt.insts_before={}", self.insts_before),
            format!("opt.insts_after={}", self.insts_after),
        ];
        for (p, n) in &self.per_pass {
            out.push(format!("opt.{}.rewrites={n}", p.name()));
        }
        out
    }
}

/// Runs the configured passes in order until nothing changes or the cap is
/// reached. `after` sees the module after every pass run.
pub fn optimize_with(m: &Module, cfg: &PassConfig, mut after: impl FnMut(Pass, usize, &Module)) -> (Module, OptStats) {
    let mut stats = OptStats {
        insts_before: m.insts.len(),
        per_pass: cfg.passes.iter().map(|&p| (p, 0)).collect(),
        ..OptStats::default()
    };
    let mut cur = m.clone();
    if !cfg.passes.is_empty() {
        for iter in 0..cfg.max_iterations {
            stats.iterations = iter + 1;
            let mut changed = false;
            for (k, &p) in cfg.passes.iter().enumerate() {
                let (next, n) = p.run(&cur);
                stats.per_pass[k].1 += n;
                changed |= next != cur;
                cur = next;
                after(p, iter, &cur);
            }
            if !changed {
                break;
            }
        }
    }
    stats.insts_after = cur.insts.len();
    (cur, stats)
}

pub fn optimize(m: &Module, level: OptLevel) -> (Module, OptStats) {
    optimize_with(m, &PassConfig::new(level), |_, _, _| {})
}

#[cfg(test)]
pub(crate) mod testutil {
    use std::collections::BTreeMap;

    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    use crate::dispatch::DispatchSpec;
    use crate::ir::{eval_dispatch, verify, Module, Param};
    use crate::memory::Surface;

    /// Binds every surface to a random 512-byte buffer and compares the
    /// results of running both modules.
    pub fn assert_equivalent(a: &Module, b: &Module, seeds: u64) {
        verify(b).unwrap_or_else(|e| panic!("{e}\n{b}"));
        for seed in 0..seeds {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut spec = DispatchSpec::new(2, 1);
            for p in &a.params {
                match p {
                    Param::Surface { name } => {
                        let bytes: Vec<u8> = (0..512).map(|_| rng.gen()).collect();
                        spec = spec.surface(name, Surface::buffer(bytes));
                    }
                    Param::Scalar { name, .. } => spec = spec.arg(name, rng.gen_range(-8..8)),
                }
            }
            let ra: BTreeMap<_, _> = eval_dispatch(a, &spec).unwrap();
            let rb: BTreeMap<_, _> = eval_dispatch(b, &spec).unwrap();
            assert_eq!(ra, rb, "seed {seed}\nbefore:\n{a}\nafter:\n{b}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::compile_source;

    const KERNEL: &str = "kernel k(SurfaceIndex buf) {
        vector<int,16> a; vector<int,32> acc = 0;
        read(buf, 0, a);
        vector<int,8> c = {1,2,3,4,5,6,7,8};
        acc.select<16,1>(0) = a + c.select<4,2>(1).replicate<4>();
        acc.select<16,1>(16) = a.select<8,2>(0).select<4,2>(1).replicate<4>();
        simd_if (a > 0) { a += 3; } simd_else { a = 0; }
        acc.select<16,1>(0) += a;
        write(buf, 64, acc.select<16,1>(0));
        write(buf, 128, acc.select<16,1>(16));
    }";

    #[test]
    fn pipeline_preserves_semantics_and_shrinks() {
        let m = compile_source(KERNEL).unwrap().remove(0);
        let (o, stats) = optimize(&m, OptLevel::O2);
        testutil::assert_equivalent(&m, &o, 20);
        assert!(o.insts.len() < m.insts.len(), "{o}");
        assert!(stats.iterations <= MAX_ITERATIONS);
        assert!(stats.lines().iter().any(|l| l.starts_with("opt.fold.rewrites=")));
    }

    #[test]
    fn o0_is_identity() {
        let m = compile_source(KERNEL).unwrap().remove(0);
        let (o, stats) = optimize(&m, OptLevel::O0);
        assert_eq!(o, m);
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn each_pass_is_idempotent_at_fixpoint() {
        let m = compile_source(KERNEL).unwrap().remove(0);
        let (o, _) = optimize(&m, OptLevel::O2);
        for p in Pass::ALL {
            let (once, _) = p.run(&o);
            let (twice, _) = p.run(&once);
            assert_eq!(once, twice, "{p}");
        }
    }

    #[test]
    fn pass_names_round_trip() {
        for p in Pass::ALL {
            assert_eq!(p.name().parse::<Pass>().unwrap(), p);
        }
        assert!("cse".parse::<Pass>().is_err());
    }
}
