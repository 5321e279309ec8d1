//! Named experiment presets and the replicate harness behind `dikf reproduce`.
//!
//! Replicate seed `s` drives the target walk, the constraint subset, the noise
//! draw and the random start. Presets that share an atom count and fraction
//! therefore see the same target and subset for the same seed, so noisy and
//! exact variants compare like with like.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::error_stats;
use crate::model::{init_state, SolveConfig};
use crate::scheduler::{solve, OrderingStrategy, Solution};
use crate::synth::{Dataset, NoiseModel, NoiseSpec, EXACT_VARIANCE};

pub const DEFAULT_ATOMS: usize = 46;
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub const TEST1_MAX_CYCLES: usize = 5;
pub const TEST2_RMSD: f64 = 0.1;
pub const TEST2_FIXED_SLACK: f64 = 2.0;
pub const TEST3_LOW_RMSD: f64 = 4.0;
pub const TEST3_HIGH_RMSD: f64 = 6.0;
pub const TEST4A_RMSD: f64 = 4.0;
pub const TEST4A_AVG: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Test1,
    Test2a,
    Test2b,
    Test2c,
    Test3a,
    Test3b,
    Test4a,
    Test4b,
    Custom,
}

impl Preset {
    /// Every named preset, in reporting order.
    pub const ALL: [Preset; 8] = [
        Preset::Test1,
        Preset::Test2a,
        Preset::Test2b,
        Preset::Test2c,
        Preset::Test3a,
        Preset::Test3b,
        Preset::Test4a,
        Preset::Test4b,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Test1 => "test1",
            Preset::Test2a => "test2a",
            Preset::Test2b => "test2b",
            Preset::Test2c => "test2c",
            Preset::Test3a => "test3a",
            Preset::Test3b => "test3b",
            Preset::Test4a => "test4a",
            Preset::Test4b => "test4b",
            Preset::Custom => "custom",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .chain(std::iter::once(&Preset::Custom))
            .find(|p| p.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{s}`")))
    }
}

/// Everything needed to rerun one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub n_atoms: usize,
    pub fraction: f64,
    pub noise: NoiseModel,
    pub solve: SolveConfig,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let exact = NoiseModel::Exact { variance: EXACT_VARIANCE };
        let (fraction, noise, ordering) = match preset {
            Preset::Test1 | Preset::Custom => (1.0, exact, OrderingStrategy::Sorted),
            Preset::Test2a => (0.33, exact, OrderingStrategy::Sorted),
            Preset::Test2b => (0.33, exact, OrderingStrategy::Random),
            Preset::Test2c => (0.33, exact, OrderingStrategy::Fixed),
            Preset::Test3a => {
                (0.33, NoiseModel::UniformVarianceGaussian { max_variance: 6.0 }, OrderingStrategy::Sorted)
            }
            Preset::Test3b => {
                (0.33, NoiseModel::UniformVarianceGaussian { max_variance: 25.0 }, OrderingStrategy::Sorted)
            }
            Preset::Test4a => (0.10, exact, OrderingStrategy::Sorted),
            Preset::Test4b => (0.10, NoiseModel::PositiveBias { mean_shift: 3.0 }, OrderingStrategy::Sorted),
        };
        Self {
            preset,
            n_atoms: DEFAULT_ATOMS,
            fraction,
            noise,
            solve: SolveConfig { ordering, ..SolveConfig::default() },
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }

    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        Dataset::generate(self.n_atoms, self.fraction, NoiseSpec::new(self.noise, seed)?, seed)
    }

    pub fn solve_config(&self, seed: u64) -> SolveConfig {
        SolveConfig { seed, ..self.solve.clone() }
    }
}

/// Outcome of one seed of one experiment. Contains no timing, so it is
/// reproducible bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub seed: u64,
    pub n_constraints: usize,
    pub start_avg: f64,
    pub start_max: f64,
    pub converged: bool,
    pub cycles_run: usize,
    pub best_cycle: usize,
    pub best_avg: f64,
    pub best_max: f64,
    /// RMSD of the returned (best) state.
    pub best_rmsd: f64,
    /// Lowest RMSD seen at the end of any cycle.
    pub min_rmsd: f64,
    /// First cycle whose average error met the average stop threshold.
    pub first_avg_cycle: Option<usize>,
    pub error: Option<String>,
}

impl ReplicateResult {
    fn failed(seed: u64, n_constraints: usize, err: String) -> Self {
        Self {
            seed,
            n_constraints,
            start_avg: f64::NAN,
            start_max: f64::NAN,
            converged: false,
            cycles_run: 0,
            best_cycle: 0,
            best_avg: f64::NAN,
            best_max: f64::NAN,
            best_rmsd: f64::NAN,
            min_rmsd: f64::NAN,
            first_avg_cycle: None,
            error: Some(err),
        }
    }

    fn from_solution(seed: u64, n_constraints: usize, start: (f64, f64), sol: &Solution, cfg: &SolveConfig) -> Self {
        let best = &sol.trace[sol.best_cycle - 1];
        let rmsds = sol.trace.iter().filter_map(|r| r.rmsd_to_target);
        Self {
            seed,
            n_constraints,
            start_avg: start.0,
            start_max: start.1,
            converged: sol.converged,
            cycles_run: sol.cycles_run,
            best_cycle: sol.best_cycle,
            best_avg: best.avg_error,
            best_max: best.max_error,
            best_rmsd: best.rmsd_to_target.unwrap_or(f64::NAN),
            min_rmsd: rmsds.fold(f64::INFINITY, f64::min),
            first_avg_cycle: sol.trace.iter().find(|r| r.skipped == 0 && r.avg_error <= cfg.avg_stop).map(|r| r.cycle),
            error: None,
        }
    }
}

/// Generates the dataset for `seed` and solves it.
pub fn run_replicate(cfg: &ExperimentConfig, seed: u64) -> ReplicateResult {
    let ds = match cfg.dataset(seed) {
        Ok(ds) => ds,
        Err(e) => return ReplicateResult::failed(seed, 0, e.to_string()),
    };
    let n = ds.constraints.len();
    let scfg = cfg.solve_config(seed);
    let start = init_state(ds.n_atoms, scfg.init_coord_range, scfg.seed)
        .and_then(|x0| error_stats(&ds.constraints, &x0, crate::eval::DEFAULT_BIN_WIDTH));
    let start = match start {
        Ok(s) => (s.avg, s.max),
        Err(e) => return ReplicateResult::failed(seed, n, e.to_string()),
    };
    match solve(&ds, &scfg, ds.target.as_deref()) {
        Ok(sol) => ReplicateResult::from_solution(seed, n, start, &sol, &scfg),
        Err(e) => ReplicateResult::failed(seed, n, e.to_string()),
    }
}

/// Runs every seed of `cfg` in parallel; results come back in seed-list order.
pub fn run_preset(cfg: &ExperimentConfig) -> Vec<ReplicateResult> {
    cfg.seeds.par_iter().map(|&s| run_replicate(cfg, s)).collect()
}

/// Median of a non-empty sample; NaN sorts last.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproduction {
    pub seeds: Vec<u64>,
    pub runs: Vec<(Preset, Vec<ReplicateResult>)>,
    pub checks: Vec<Check>,
}

impl Reproduction {
    pub fn results(&self, preset: Preset) -> &[ReplicateResult] {
        self.runs.iter().find(|(p, _)| *p == preset).map(|(_, r)| r.as_slice()).unwrap_or(&[])
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.runs.iter().all(|(_, rs)| rs.iter().all(|r| r.error.is_none()))
    }
}

fn column(rs: &[ReplicateResult], f: impl Fn(&ReplicateResult) -> f64) -> Vec<f64> {
    rs.iter().map(f).collect()
}

/// Compares the replicate results with the acceptance thresholds.
pub fn acceptance_checks(runs: &[(Preset, Vec<ReplicateResult>)]) -> Vec<Check> {
    let get = |p: Preset| runs.iter().find(|(q, _)| *q == p).map(|(_, r)| r.as_slice()).unwrap_or(&[]);
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(Check { name: name.to_string(), passed, detail });
    };

    let t1 = get(Preset::Test1);
    let cycles: Vec<String> = t1.iter().map(|r| r.first_avg_cycle.map_or("-".to_string(), |c| c.to_string())).collect();
    push(
        "test1",
        !t1.is_empty() && t1.iter().all(|r| r.first_avg_cycle.is_some_and(|c| c <= TEST1_MAX_CYCLES)),
        format!("cycle reaching avg <= 0.3 SD per seed: [{}], need <= {TEST1_MAX_CYCLES}", cycles.join(" ")),
    );

    let cyc = |p| median(&column(get(p), |r| r.cycles_run as f64));
    let (a, b, c) = (cyc(Preset::Test2a), cyc(Preset::Test2b), cyc(Preset::Test2c));
    let t2: Vec<&ReplicateResult> =
        [Preset::Test2a, Preset::Test2b, Preset::Test2c].iter().flat_map(|&p| get(p)).collect();
    let worst = t2.iter().map(|r| r.min_rmsd).fold(f64::NEG_INFINITY, f64::max);
    push(
        "test2",
        a <= b && b <= c + TEST2_FIXED_SLACK && !t2.is_empty() && worst <= TEST2_RMSD,
        format!("median cycles sorted {a} random {b} fixed {c}; worst min rmsd {worst:.4} (need <= {TEST2_RMSD})"),
    );

    let rm = |p| median(&column(get(p), |r| r.best_rmsd));
    let (lo, hi) = (rm(Preset::Test3a), rm(Preset::Test3b));
    push(
        "test3",
        lo <= TEST3_LOW_RMSD && hi <= TEST3_HIGH_RMSD && lo <= hi,
        format!("median best rmsd low {lo:.3} (<= {TEST3_LOW_RMSD}) high {hi:.3} (<= {TEST3_HIGH_RMSD})"),
    );

    let t4a = get(Preset::Test4a);
    let (r4, e4) = (rm(Preset::Test4a), median(&column(t4a, |r| r.best_avg)));
    push(
        "test4a",
        r4 <= TEST4A_RMSD && e4 <= TEST4A_AVG,
        format!("median best rmsd {r4:.3} (<= {TEST4A_RMSD}), median best avg {e4:.3} (<= {TEST4A_AVG})"),
    );

    let t4b = get(Preset::Test4b);
    let matched = t4a.len() == t4b.len()
        && !t4a.is_empty()
        && t4a.iter().zip(t4b).all(|(x, y)| x.seed == y.seed && y.error.is_none() && y.best_rmsd > x.best_rmsd);
    push(
        "test4b",
        matched,
        format!(
            "best rmsd biased vs exact per seed: [{}]",
            t4a.iter()
                .zip(t4b)
                .map(|(x, y)| format!("{:.2}>{:.2}", y.best_rmsd, x.best_rmsd))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    );
    checks
}

/// Runs every named preset over `seeds`.
pub fn reproduce(seeds: &[u64]) -> Reproduction {
    let runs: Vec<(Preset, Vec<ReplicateResult>)> = Preset::ALL
        .par_iter()
        .map(|&p| {
            let cfg = ExperimentConfig { seeds: seeds.to_vec(), ..ExperimentConfig::preset(p) };
            (p, run_preset(&cfg))
        })
        .collect();
    let checks = acceptance_checks(&runs);
    Reproduction { seeds: seeds.to_vec(), runs, checks }
}

/// Fixed-width table: one row per preset, then one line per check.
pub fn summary_table(rep: &Reproduction) -> String {
    let mut out = String::new();
    let seeds: Vec<String> = rep.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "# seeds: {}", seeds.join(","));
    let _ = writeln!(
        out,
        "{:<8} {:>5} {:>9} {:>11} {:>10} {:>10} {:>9} {:>9} {:>9}  cycles",
        "preset", "n", "converged", "med_cycles", "start_avg", "start_max", "best_avg", "best_max", "best_rmsd"
    );
    for (p, rs) in &rep.runs {
        let conv = rs.iter().filter(|r| r.converged).count();
        let cycles: Vec<String> =
            rs.iter().map(|r| if r.error.is_some() { "err".into() } else { r.cycles_run.to_string() }).collect();
        let _ = writeln!(
            out,
            "{:<8} {:>5} {:>9} {:>11.1} {:>10.2} {:>10.2} {:>9.3} {:>9.3} {:>9.3}  {}",
            p.name(),
            rs.first().map_or(0, |r| r.n_constraints),
            format!("{conv}/{}", rs.len()),
            median(&column(rs, |r| r.cycles_run as f64)),
            median(&column(rs, |r| r.start_avg)),
            median(&column(rs, |r| r.start_max)),
            median(&column(rs, |r| r.best_avg)),
            median(&column(rs, |r| r.best_max)),
            median(&column(rs, |r| r.best_rmsd)),
            cycles.join(" ")
        );
    }
    for (p, rs) in &rep.runs {
        for r in rs {
            if let Some(e) = &r.error {
                let _ = writeln!(out, "ERROR {} seed {}: {e}", p.name(), r.seed);
            }
        }
    }
    for c in &rep.checks {
        let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    out
}

/// Per-replicate detail as CSV.
pub fn replicates_csv(rep: &Reproduction) -> String {
    let mut out = String::from(
        "preset,seed,n_constraints,start_avg,start_max,converged,cycles_run,best_cycle,best_avg,best_max,best_rmsd,min_rmsd,first_avg_cycle,error\n",
    );
    for (p, rs) in &rep.runs {
        for r in rs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                p.name(),
                r.seed,
                r.n_constraints,
                r.start_avg,
                r.start_max,
                r.converged,
                r.cycles_run,
                r.best_cycle,
                r.best_avg,
                r.best_max,
                r.best_rmsd,
                r.min_rmsd,
                r.first_avg_cycle.map_or(String::new(), |c| c.to_string()),
                r.error.as_deref().unwrap_or("").replace(',', ";")
            );
        }
    }
    out
}
