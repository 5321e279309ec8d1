//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs with its own `main` so the verdict lines always reach the console.

mod common;

use std::time::Instant;

use dikf::constraints::{eval_angle, eval_dihedral, eval_distance, predict};
use dikf::eval::{error_stats, superpose_rmsd};
use dikf::experiment::{self, ExperimentConfig, Preset, Reproduction, DEFAULT_SEEDS};
use dikf::filter::{apply_constraint, apply_in_place, UpdateStats};
use dikf::model::{init_covariance, init_state};
use dikf::scheduler::{solve_from, SolveObserver};
use dikf::synth::NoiseModel;
use dikf::{solve, Constraint, ConstraintKind, CovarianceMatrix, SolveConfig, StateVector};
use nalgebra::{DMatrix, DVector, Matrix3};
use rand::Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// 1: all exact distances, sorted ordering, avg <= 0.3 SD within 5 cycles.
fn test1_convergence() -> Verdict {
    let cfg = ExperimentConfig::preset(Preset::Test1);
    let mut per_seed = Vec::new();
    let mut ok = true;
    for &seed in &DEFAULT_SEEDS {
        let ds = cfg.dataset(seed).unwrap();
        assert!(matches!(ds.noise.model, NoiseModel::Exact { variance } if variance == 1e-4));
        let t = Instant::now();
        let sol = solve(&ds, &cfg.solve_config(seed), ds.target.as_deref()).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let hit = sol.trace.iter().find(|r| r.skipped == 0 && r.avg_error <= 0.3).map(|r| r.cycle);
        ok &= hit.is_some_and(|c| c <= 5) && secs < 60.0;
        per_seed.push(format!("seed {seed}: {} ({secs:.1}s)", hit.map_or("never".into(), |c| format!("cycle {c}"))));
    }
    verdict(ok, format!("avg <= 0.3 SD reached at [{}]; need cycle <= 5, < 60 s", per_seed.join(", ")))
}

/// 2: the same runs continued to 100 cycles stay put and keep improving.
fn test1_stability() -> Verdict {
    let cfg = ExperimentConfig::preset(Preset::Test1);
    let mut ok = true;
    let mut finals = Vec::new();
    for &seed in &DEFAULT_SEEDS {
        let ds = cfg.dataset(seed).unwrap();
        let scfg = SolveConfig { avg_stop: 1e-300, max_stop: 1e-300, ..cfg.solve_config(seed) };
        let sol = solve(&ds, &scfg, ds.target.as_deref()).unwrap();
        let mut best = f64::INFINITY;
        let running: Vec<f64> = sol
            .trace
            .iter()
            .map(|r| {
                best = best.min(r.avg_error);
                best
            })
            .collect();
        let returned = error_stats(&ds.constraints, &sol.state, 0.5).unwrap().avg;
        let last = *running.last().unwrap();
        ok &= sol.cycles_run == 100
            && running.windows(2).all(|w| w[1] <= w[0])
            && (returned - last).abs() <= 1e-9 * last.max(1e-12)
            && last <= 0.05;
        finals.push(format!("{last:.2e}"));
    }
    verdict(ok, format!("best-so-far avg after 100 cycles [{}]; need <= 0.05", finals.join(", ")))
}

/// 3: ordering strategies on 33% exact data.
fn test2_ordering(rep: &Reproduction) -> Verdict {
    let cycles = |p| median(&rep.results(p).iter().map(|r| r.cycles_run as f64).collect::<Vec<_>>());
    let (s, r, f) = (cycles(Preset::Test2a), cycles(Preset::Test2b), cycles(Preset::Test2c));
    let worst = [Preset::Test2a, Preset::Test2b, Preset::Test2c]
        .iter()
        .flat_map(|&p| rep.results(p))
        .map(|x| x.min_rmsd)
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        s <= r && r <= f + 2.0 && worst <= 0.1,
        format!("median cycles sorted {s} random {r} fixed {f}; worst rmsd reached {worst:.4} Å (need <= 0.1)"),
    )
}

/// 4: Gaussian noise on the 33% subset.
fn test3_noise(rep: &Reproduction) -> Verdict {
    let rmsd = |p| median(&rep.results(p).iter().map(|r| r.best_rmsd).collect::<Vec<_>>());
    let (lo, hi) = (rmsd(Preset::Test3a), rmsd(Preset::Test3b));
    verdict(
        lo <= 4.0 && hi <= 6.0 && lo <= hi,
        format!("median best rmsd v_max=6: {lo:.3} Å (<= 4.0), v_max=25: {hi:.3} Å (<= 6.0)"),
    )
}

/// 5: 10% exact distances.
fn test4a_sparse(rep: &Reproduction) -> Verdict {
    let rs = rep.results(Preset::Test4a);
    let rmsd = median(&rs.iter().map(|r| r.best_rmsd).collect::<Vec<_>>());
    let avg = median(&rs.iter().map(|r| r.best_avg).collect::<Vec<_>>());
    verdict(
        rmsd <= 4.0 && avg <= 0.5,
        format!("median best rmsd {rmsd:.3} Å (<= 4.0), median best avg {avg:.3} SD (<= 0.5)"),
    )
}

/// 6: biased noise on the same 10% subset does worse, seed by seed.
fn test4b_bias(rep: &Reproduction) -> Verdict {
    let (a, b) = (rep.results(Preset::Test4a), rep.results(Preset::Test4b));
    let ok = a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| x.seed == y.seed && y.error.is_none() && y.best_rmsd > x.best_rmsd);
    let pairs: Vec<String> = a.iter().zip(b).map(|(x, y)| format!("{:.2}>{:.2}", y.best_rmsd, x.best_rmsd)).collect();
    verdict(ok, format!("biased vs exact best rmsd per seed [{}]", pairs.join(" ")))
}

/// 7: analytic Jacobians against central differences.
fn jacobian_oracle() -> Verdict {
    let mut rng = common::rng(7001);
    let mut worst = [0.0f64; 3];
    let mut counts = [0usize; 3];
    while counts.iter().any(|&c| c < 1000) {
        let p = common::random_points(&mut rng, 4, 6.0);
        let x = StateVector::new(p.clone()).unwrap();
        let (a, b, c) = (x.atom(1) - x.atom(0), x.atom(2) - x.atom(1), x.atom(3) - x.atom(2));
        let cases: [(usize, bool); 3] = [
            (0, a.norm() > 0.5),
            (1, a.norm() > 0.5 && b.norm() > 0.5 && a.cross(&b).norm() > 0.1 * a.norm() * b.norm()),
            (2, b.norm() > 0.5 && a.cross(&b).norm() > 0.3 * b.norm() && c.cross(&b).norm() > 0.3 * b.norm()),
        ];
        for (kind, usable) in cases {
            if !usable || counts[kind] >= 1000 {
                continue;
            }
            let (pred, fd) = match kind {
                0 => (
                    eval_distance(&x, 0, 1).unwrap(),
                    common::fd_gradient(|q| common::distance(q, 0, 1), &p, 1e-6, false),
                ),
                1 => (
                    eval_angle(&x, 0, 1, 2).unwrap(),
                    common::fd_gradient(|q| common::angle(q, 0, 1, 2), &p, 1e-6, false),
                ),
                _ => (
                    eval_dihedral(&x, 0, 1, 2, 3).unwrap(),
                    common::fd_gradient(|q| common::dihedral(q, 0, 1, 2, 3), &p, 1e-6, true),
                ),
            };
            let analytic = pred.jacobian.to_dense(12);
            let err = analytic.iter().zip(&fd).map(|(an, f)| (an - f).abs() / f.abs().max(1.0)).fold(0.0, f64::max);
            worst[kind] = worst[kind].max(err);
            counts[kind] += 1;
        }
    }
    verdict(
        worst.iter().all(|&w| w <= 1e-5),
        format!(
            "worst relative error distance {:.1e}, angle {:.1e}, dihedral {:.1e} over 1000 configurations each",
            worst[0], worst[1], worst[2]
        ),
    )
}

/// 8: linear scalar update against the closed-form Gaussian posterior.
fn conjugate_oracle() -> Verdict {
    let mut rng = common::rng(8001);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let index = rng.random_range(0..3);
        let prior = rng.random_range(-50.0..50.0);
        let p = 10f64.powf(rng.random_range(-2.0..3.0));
        let v = 10f64.powf(rng.random_range(-6.0..2.0));
        let z = rng.random_range(-50.0..50.0);
        let mut coords = vec![0.5, -0.5, 2.0];
        coords[index] = prior;
        let mut x = StateVector::new(coords).unwrap();
        let mut cov = init_covariance(1, p).unwrap();
        apply_in_place(&mut x, &mut cov, &common::Coordinate { index, z, v }, &SolveConfig::default()).unwrap();
        let mean = prior + p * (z - prior) / (p + v);
        let var = p * v / (p + v);
        worst = worst
            .max((x.as_slice()[index] - mean).abs() / mean.abs().max(1.0))
            .max((cov.get(index, index) - var).abs() / var.max(1.0));
    }
    verdict(worst <= 1e-12, format!("worst scaled deviation {worst:.1e} over 1000 cases (need <= 1e-12)"))
}

/// 9: sparse update against dense matrix algebra on small random problems.
fn dense_oracle() -> Verdict {
    let mut rng = common::rng(9001);
    let cfg = SolveConfig::default();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut iter_mismatch = 0;
    while checked < 1000 {
        let n = rng.random_range(2..=5);
        let x0 = common::random_points(&mut rng, n, 4.0);
        let Some(c) = common::random_constraint(&mut rng, n, &x0) else { continue };
        let cmat = common::random_spd(&mut rng, 3 * n, 2.0, 0.5);
        let cov = CovarianceMatrix::from_matrix(cmat.clone()).unwrap();
        let Ok(out) = apply_constraint(&StateVector::new(x0.clone()).unwrap(), &cov, &c, &cfg) else { continue };
        if out.skipped {
            continue;
        }
        let model = |s: &DVector<f64>| {
            let p = predict(&c, &StateVector::new(s.as_slice().to_vec()).unwrap()).unwrap();
            (p.value, DVector::from_vec(p.jacobian.to_dense(3 * n)))
        };
        let (xd, cd, iters) = common::dense_iterated_update(
            &DVector::from_vec(x0),
            &cmat,
            model,
            c.measured(),
            c.variance(),
            matches!(c.kind(), ConstraintKind::Dihedral(_)),
            cfg.inner_tol,
            cfg.inner_max_iters,
        );
        iter_mismatch += usize::from(iters != out.inner_iterations);
        let dx = (DVector::from_column_slice(out.state.as_slice()) - xd).amax();
        let dc: DMatrix<f64> = out.covariance.as_matrix() - (&cd + cd.transpose()) * 0.5;
        worst = worst.max(dx).max(dc.amax());
        checked += 1;
    }
    verdict(
        worst <= 1e-10 && iter_mismatch == 0,
        format!("worst deviation {worst:.1e} over {checked} instances, {iter_mismatch} inner-count mismatches"),
    )
}

#[derive(Default)]
struct Hygiene {
    worst_asym: f64,
    worst_diag: f64,
    last_diag: Vec<f64>,
    increases: usize,
    updates: usize,
}

impl SolveObserver for Hygiene {
    fn cycle_started(&mut self, _cycle: usize, _x: &StateVector, cov: &CovarianceMatrix) {
        self.last_diag = cov.diagonal();
    }

    fn constraint_applied(
        &mut self,
        _: usize,
        _: &Constraint,
        _: &UpdateStats,
        _: &StateVector,
        cov: &CovarianceMatrix,
    ) {
        let m = cov.as_matrix();
        self.worst_asym = self.worst_asym.max((m - m.transpose()).amax());
        self.worst_diag = self.worst_diag.min(cov.min_diagonal());
        let d = cov.diagonal();
        self.increases += d.iter().zip(&self.last_diag).filter(|(a, b)| a > b).count();
        self.last_diag = d;
        self.updates += 1;
    }
}

/// 10: covariance symmetry, sign and monotonicity across a whole solve.
fn covariance_hygiene() -> Verdict {
    let cfg = ExperimentConfig::preset(Preset::Test2a);
    let seed = DEFAULT_SEEDS[0];
    let ds = cfg.dataset(seed).unwrap();
    let scfg = cfg.solve_config(seed);
    let x0 = init_state(ds.n_atoms, scfg.init_coord_range, seed).unwrap();
    let mut h = Hygiene { worst_diag: f64::INFINITY, ..Hygiene::default() };
    solve_from(&ds, &scfg, None, x0, &mut h).unwrap();
    verdict(
        h.worst_asym <= 1e-9 && h.worst_diag >= -1e-9 && h.increases == 0,
        format!(
            "{} updates: max |C - Cᵀ| {:.1e}, min diagonal {:.2e}, {} diagonal increases within a cycle",
            h.updates, h.worst_asym, h.worst_diag, h.increases
        ),
    )
}

/// 11: Kabsch superposition against a brute-force rotation search.
fn superposition_oracle() -> Verdict {
    let mut rng = common::rng(11001);
    let mut worst = 0.0f64;
    for case in 0..40 {
        let est: Vec<[f64; 3]> = (0..5).map(|_| [0, 1, 2].map(|_| rng.random_range(-5.0..5.0))).collect();
        let tgt: Vec<[f64; 3]> = if case % 2 == 0 {
            (0..5).map(|_| [0, 1, 2].map(|_| rng.random_range(-5.0..5.0))).collect()
        } else {
            let r = common::random_rotation(&mut rng);
            common::transform(&est, &r, [2.0, -1.0, 4.0])
                .iter()
                .map(|p| p.map(|c| c + rng.random_range(-0.7..0.7)))
                .collect()
        };
        for allow in [false, true] {
            let fast = superpose_rmsd(&est, &tgt, allow).unwrap().rmsd;
            worst = worst.max((fast - common::grid_search_rmsd(&est, &tgt, allow)).abs());
        }
    }
    let base: Vec<[f64; 3]> = (0..5).map(|_| [0, 1, 2].map(|_| rng.random_range(-5.0..5.0))).collect();
    let shifted = common::transform(&base, &Matrix3::identity(), [7.0, -3.0, 1.0]);
    let turned = common::transform(&base, &common::random_rotation(&mut rng), [1.0, 1.0, 1.0]);
    let mirrored: Vec<[f64; 3]> = base.iter().map(|p| [-p[0], p[1], p[2]]).collect();
    let zero = [
        superpose_rmsd(&base, &base, false).unwrap().rmsd,
        superpose_rmsd(&base, &shifted, false).unwrap().rmsd,
        superpose_rmsd(&base, &turned, false).unwrap().rmsd,
        superpose_rmsd(&base, &mirrored, true).unwrap().rmsd,
    ];
    let zmax = zero.iter().copied().fold(0.0, f64::max);
    verdict(
        worst <= 1e-3 && zmax <= 1e-9,
        format!("worst |kabsch - search| {worst:.1e} Å over 80 comparisons; exact copies {zmax:.1e} Å"),
    )
}

/// 12: two reproduce runs give byte-identical summaries.
fn determinism(first: &Reproduction) -> Verdict {
    let a = experiment::summary_table(first);
    let b = experiment::summary_table(&experiment::reproduce(&DEFAULT_SEEDS));
    verdict(a == b, format!("summary tables {} ({} bytes)", if a == b { "identical" } else { "differ" }, a.len()))
}

fn main() {
    let started = Instant::now();
    let rep = experiment::reproduce(&DEFAULT_SEEDS);
    println!("reproduce summary (seeds {:?}):", DEFAULT_SEEDS);
    print!("{}", experiment::summary_table(&rep));
    println!();

    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("test1 convergence", Box::new(test1_convergence)),
        ("test1 stability", Box::new(test1_stability)),
        ("test2 ordering", Box::new(|| test2_ordering(&rep))),
        ("test3 noise", Box::new(|| test3_noise(&rep))),
        ("test4a sparse", Box::new(|| test4a_sparse(&rep))),
        ("test4b bias", Box::new(|| test4b_bias(&rep))),
        ("jacobian oracle", Box::new(jacobian_oracle)),
        ("conjugate gaussian oracle", Box::new(conjugate_oracle)),
        ("dense algebra oracle", Box::new(dense_oracle)),
        ("covariance hygiene", Box::new(covariance_hygiene)),
        ("superposition oracle", Box::new(superposition_oracle)),
        ("determinism", Box::new(|| determinism(&rep))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        failed += usize::from(!v.passed);
        println!("{} criterion {:>2} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!(
        "\nacceptance: {} of {} criteria passed in {:.0} s",
        criteria.len() - failed,
        criteria.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
