//! The outer loop: introduce every constraint, measure how well the result
//! satisfies them, stop or reheat the covariance, reorder, repeat.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::standardized_error;
use crate::error::{Error, Result};
use crate::eval::{reflection_allowed, superpose_rmsd};
use crate::filter::{apply_in_place, UpdateStats};
use crate::model::{
    init_covariance, init_state, seeded_rng, stream, Constraint, CovarianceMatrix, CycleReport, SolveConfig,
    StateVector,
};
use crate::synth::Dataset;

/// Order in which constraints are introduced on cycles after the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingStrategy {
    /// Decreasing |standardized error|, ties by ascending constraint id.
    Sorted,
    /// Fresh seeded shuffle every cycle.
    Random,
    /// Dataset order.
    Fixed,
}

impl OrderingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            OrderingStrategy::Sorted => "sorted",
            OrderingStrategy::Random => "random",
            OrderingStrategy::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for OrderingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sorted" => Ok(Self::Sorted),
            "random" => Ok(Self::Random),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::InvalidArgument(format!("unknown ordering `{other}`"))),
        }
    }
}

/// Best estimate found by a solve, with its convergence history.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub state: StateVector,
    pub covariance: CovarianceMatrix,
    pub trace: Vec<CycleReport>,
    /// `(constraint id, E)` at the returned state, in dataset order.
    /// Constraints that cannot be evaluated there carry `+∞`.
    pub per_constraint_errors: Vec<(u64, f64)>,
    pub converged: bool,
    pub cycles_run: usize,
    /// Cycle (1-based) that produced the returned state.
    pub best_cycle: usize,
}

/// A solve that stopped on an error, with the cycles completed before it.
#[derive(Debug, thiserror::Error)]
#[error("solve aborted after {} complete cycle(s)", trace.len())]
pub struct SolveAborted {
    #[source]
    pub error: Error,
    pub trace: Vec<CycleReport>,
}

impl From<Error> for SolveAborted {
    fn from(error: Error) -> Self {
        Self { error, trace: Vec::new() }
    }
}

/// Hooks into the progress of a solve. All methods default to no-ops.
pub trait SolveObserver {
    /// Called with the state and (possibly reheated) covariance a cycle starts from.
    fn cycle_started(&mut self, _cycle: usize, _x: &StateVector, _cov: &CovarianceMatrix) {}

    /// Called after every constraint introduction, including skipped ones.
    fn constraint_applied(
        &mut self,
        _cycle: usize,
        _constraint: &Constraint,
        _stats: &UpdateStats,
        _x: &StateVector,
        _cov: &CovarianceMatrix,
    ) {
    }

    fn cycle_finished(&mut self, _report: &CycleReport) {}
}

impl SolveObserver for () {}

/// Permutation of `0..constraints.len()` giving the introduction order.
pub fn order_constraints<R: Rng + ?Sized>(
    constraints: &[Constraint],
    errors: &[f64],
    strategy: OrderingStrategy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if constraints.len() != errors.len() {
        return Err(Error::InvalidArgument(format!("{} constraints but {} errors", constraints.len(), errors.len())));
    }
    let mut order: Vec<usize> = (0..constraints.len()).collect();
    match strategy {
        OrderingStrategy::Fixed => {}
        OrderingStrategy::Random => order.shuffle(rng),
        OrderingStrategy::Sorted => {
            let key = |e: f64| if e.is_nan() { f64::INFINITY } else { e.abs() };
            order.sort_by(|&a, &b| {
                key(errors[b]).total_cmp(&key(errors[a])).then(constraints[a].id().cmp(&constraints[b].id()))
            });
        }
    }
    Ok(order)
}

/// True when either the average or the maximum error is within its threshold.
pub fn check_stop(avg: f64, max: f64, cfg: &SolveConfig) -> bool {
    avg <= cfg.avg_stop || max <= cfg.max_stop
}

/// Result of one serial pass over the constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutcome {
    pub state: StateVector,
    pub covariance: CovarianceMatrix,
    /// Standardized error of each input constraint at the final state, `+∞`
    /// when it cannot be evaluated there.
    pub errors: Vec<f64>,
    /// Introductions skipped because of singular geometry.
    pub skipped: usize,
}

/// Introduces `constraints` serially, in the given order, then evaluates
/// every one of them against the final state.
pub fn run_cycle(
    x: &StateVector,
    cov: &CovarianceMatrix,
    constraints: &[&Constraint],
    cfg: &SolveConfig,
) -> Result<CycleOutcome> {
    let mut state = x.clone();
    let mut covariance = cov.clone();
    let skipped = introduce_all(&mut state, &mut covariance, constraints, cfg, 1, &mut ())?;
    let errors = evaluate_errors(constraints.iter().copied(), &state);
    Ok(CycleOutcome { state, covariance, errors, skipped })
}

fn introduce_all(
    x: &mut StateVector,
    cov: &mut CovarianceMatrix,
    constraints: &[&Constraint],
    cfg: &SolveConfig,
    cycle: usize,
    observer: &mut dyn SolveObserver,
) -> Result<usize> {
    let mut skipped = 0;
    for &c in constraints {
        c.check_atoms(x.n_atoms())?;
        let stats = apply_in_place(x, cov, c, cfg).map_err(|e| match e {
            Error::NumericalBreakdown(msg) => {
                Error::NumericalBreakdown(format!("cycle {cycle}, constraint {}: {msg}", c.id()))
            }
            other => other,
        })?;
        if stats.skipped {
            skipped += 1;
        }
        observer.constraint_applied(cycle, c, &stats, x, cov);
    }
    Ok(skipped)
}

fn evaluate_errors<'a>(constraints: impl Iterator<Item = &'a Constraint>, x: &StateVector) -> Vec<f64> {
    constraints.map(|c| standardized_error(c, x).unwrap_or(f64::INFINITY)).collect()
}

/// Mean and max of |E| over the finite entries, and the count of the rest.
fn summarize(errors: &[f64]) -> (f64, f64, usize) {
    let finite: Vec<f64> = errors.iter().filter(|e| e.is_finite()).map(|e| e.abs()).collect();
    let bad = errors.len() - finite.len();
    if finite.is_empty() {
        return (0.0, 0.0, bad);
    }
    let avg = finite.iter().sum::<f64>() / finite.len() as f64;
    let max = finite.iter().copied().fold(0.0, f64::max);
    (avg, max, bad)
}

/// Runs the full reheat/reorder loop from a random start.
pub fn solve(
    dataset: &Dataset,
    cfg: &SolveConfig,
    target: Option<&[[f64; 3]]>,
) -> std::result::Result<Solution, SolveAborted> {
    cfg.validate()?;
    let x0 = init_state(dataset.n_atoms, cfg.init_coord_range, cfg.seed)?;
    solve_from(dataset, cfg, target, x0, &mut ())
}

/// Runs the full loop from the given initial state, reporting progress to `observer`.
pub fn solve_from(
    dataset: &Dataset,
    cfg: &SolveConfig,
    target: Option<&[[f64; 3]]>,
    initial: StateVector,
    observer: &mut dyn SolveObserver,
) -> std::result::Result<Solution, SolveAborted> {
    cfg.validate()?;
    let n = dataset.n_atoms;
    if initial.n_atoms() != n {
        return Err(
            Error::InvalidArgument(format!("initial state has {} atoms, dataset has {n}", initial.n_atoms())).into()
        );
    }
    for c in &dataset.constraints {
        c.check_atoms(n)?;
    }
    if let Some(t) = target {
        if t.len() != n {
            return Err(Error::InvalidArgument(format!("target has {} atoms, dataset has {n}", t.len())).into());
        }
    }

    let constraints = &dataset.constraints;
    let allow_reflection = reflection_allowed(constraints);
    let c0 = init_covariance(n, cfg.init_variance)?;
    let mut rng = seeded_rng(cfg.seed, stream::ORDERING);

    let mut x = initial;
    let mut cov = c0.clone();
    let mut order: Vec<usize> = (0..constraints.len()).collect();
    let mut trace: Vec<CycleReport> = Vec::new();
    let mut best: Option<(bool, f64, usize, StateVector, CovarianceMatrix, Vec<f64>)> = None;
    let mut converged = false;

    for cycle in 1..=cfg.max_outer_cycles {
        let started = Instant::now();
        observer.cycle_started(cycle, &x, &cov);
        let ordered: Vec<&Constraint> = order.iter().map(|&i| &constraints[i]).collect();
        let skipped = match introduce_all(&mut x, &mut cov, &ordered, cfg, cycle, observer) {
            Ok(s) => s,
            Err(error) => return Err(SolveAborted { error, trace }),
        };
        let errors = evaluate_errors(constraints.iter(), &x);
        let (avg, max, unevaluable) = summarize(&errors);
        let rmsd_to_target =
            target.and_then(|t| superpose_rmsd(&x.to_points(), t, allow_reflection).ok().map(|s| s.rmsd));
        let report = CycleReport {
            cycle,
            avg_error: avg,
            max_error: max,
            rmsd_to_target,
            skipped: skipped.max(unevaluable),
            wall_time: started.elapsed().as_secs_f64(),
        };
        observer.cycle_finished(&report);
        trace.push(report);

        let complete = unevaluable == 0;
        let better = match &best {
            None => true,
            Some((best_complete, best_avg, ..)) => {
                (complete && !best_complete) || (complete == *best_complete && avg < *best_avg)
            }
        };
        if better {
            best = Some((complete, avg, cycle, x.clone(), cov.clone(), errors.clone()));
        }

        if complete && check_stop(avg, max, cfg) {
            converged = true;
            break;
        }
        if cycle == cfg.max_outer_cycles {
            break;
        }
        // reheat, then reorder by the errors just measured
        cov = c0.clone();
        order = order_constraints(constraints, &errors, cfg.ordering, &mut rng)?;
    }

    let (_, _, best_cycle, state, covariance, errors) = best.expect("at least one cycle always runs");
    let per_constraint_errors = constraints.iter().map(|c| c.id()).zip(errors).collect();
    Ok(Solution { state, covariance, cycles_run: trace.len(), trace, per_constraint_errors, converged, best_cycle })
}
