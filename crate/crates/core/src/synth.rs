//! Synthetic targets and distance datasets.
//!
//! A target is a self-avoiding chain with Cα-like 3.8 Å steps. All pairwise
//! distances are enumerated, a random fraction is kept, and noise is applied
//! according to a [`NoiseSpec`].

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{seeded_rng, stream, Constraint, ConstraintKind};

/// Virtual bond length between consecutive chain atoms, Å.
pub const BOND_LENGTH: f64 = 3.8;

/// Minimum distance between non-consecutive chain atoms, Å.
pub const MIN_NONBONDED: f64 = 4.0;

/// Declared variance of "exact" distances, Å².
pub const EXACT_VARIANCE: f64 = 1e-4;

/// Volume per backbone atom in a folded chain, Å³. Puts 46 atoms inside a
/// sphere of about 11.5 Å.
pub const VOLUME_PER_ATOM: f64 = 140.0;

const STEP_ATTEMPTS: usize = 1000;
const RESTARTS: usize = 100;

/// How measurements are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NoiseModel {
    /// Measurements untouched, declared variance fixed.
    Exact { variance: f64 },
    /// Per constraint: `v ~ U(0, max_variance)`, measured += `N(0, v)`, declared `v`.
    UniformVarianceGaussian { max_variance: f64 },
    /// Measured += `U(0, 2·mean_shift)`, declared variance `mean_shift²`.
    PositiveBias { mean_shift: f64 },
}

impl NoiseModel {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::Exact { .. } => "exact",
            NoiseModel::UniformVarianceGaussian { .. } => "gaussian",
            NoiseModel::PositiveBias { .. } => "bias",
        }
    }

    pub fn param(&self) -> f64 {
        match *self {
            NoiseModel::Exact { variance } => variance,
            NoiseModel::UniformVarianceGaussian { max_variance } => max_variance,
            NoiseModel::PositiveBias { mean_shift } => mean_shift,
        }
    }

    /// Builds a model from its command-line name and parameter.
    pub fn from_parts(name: &str, param: Option<f64>) -> Result<Self> {
        let model = match name {
            "exact" => NoiseModel::Exact { variance: param.unwrap_or(EXACT_VARIANCE) },
            "gaussian" => NoiseModel::UniformVarianceGaussian { max_variance: param.unwrap_or(6.0) },
            "bias" => NoiseModel::PositiveBias { mean_shift: param.unwrap_or(3.0) },
            other => return Err(Error::InvalidArgument(format!("unknown noise model `{other}`"))),
        };
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub model: NoiseModel,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(model: NoiseModel, seed: u64) -> Result<Self> {
        let spec = Self { model, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn exact() -> Self {
        Self { model: NoiseModel::Exact { variance: EXACT_VARIANCE }, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.model.param();
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{} noise parameter must be positive, got {p}",
                self.model.name()
            )));
        }
        Ok(())
    }
}

/// A constraint set with the metadata needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_atoms: usize,
    pub constraints: Vec<Constraint>,
    pub noise: NoiseSpec,
    pub target: Option<Vec<[f64; 3]>>,
    pub fraction: f64,
    pub seed: u64,
}

/// Canonical form of a constraint's atom list, identical for reversed lists.
fn canonical_atoms(kind: ConstraintKind) -> (&'static str, Vec<usize>) {
    let atoms = kind.atoms().to_vec();
    let mut rev = atoms.clone();
    rev.reverse();
    (kind.name(), atoms.min(rev))
}

impl Dataset {
    /// Wraps a hand-built constraint list; metadata is set to "exact, full set".
    pub fn from_constraints(n_atoms: usize, constraints: Vec<Constraint>) -> Result<Self> {
        let ds = Self { n_atoms, constraints, noise: NoiseSpec::exact(), target: None, fraction: 1.0, seed: 0 };
        ds.validate()?;
        Ok(ds)
    }

    /// Full pipeline: random target, all distances, sampling, noise.
    pub fn generate(n_atoms: usize, fraction: f64, noise: NoiseSpec, seed: u64) -> Result<Self> {
        let target = generate_target(n_atoms, seed)?;
        Self::from_target(target, fraction, noise, seed)
    }

    /// Same pipeline on user-supplied target coordinates.
    pub fn from_target(target: Vec<[f64; 3]>, fraction: f64, noise: NoiseSpec, seed: u64) -> Result<Self> {
        noise.validate()?;
        let all = enumerate_distances(&target)?;
        let sampled = sample_fraction(&all, fraction, seed)?;
        let constraints = apply_noise(&sampled, &noise)?;
        let ds = Self { n_atoms: target.len(), constraints, noise, target: Some(target), fraction, seed };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::InvalidArgument("dataset has no atoms".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("fraction {} not in (0, 1]", self.fraction)));
        }
        if let Some(t) = &self.target {
            if t.len() != self.n_atoms {
                return Err(Error::InvalidArgument(format!(
                    "target has {} atoms, dataset declares {}",
                    t.len(),
                    self.n_atoms
                )));
            }
        }
        let mut ids = HashSet::new();
        let mut seen = HashSet::new();
        for c in &self.constraints {
            c.check_atoms(self.n_atoms)?;
            if !ids.insert(c.id()) {
                return Err(Error::InvalidArgument(format!("duplicate constraint id {}", c.id())));
            }
            if !seen.insert(canonical_atoms(c.kind())) {
                return Err(Error::InvalidArgument(format!(
                    "constraint {} duplicates an earlier {} on the same atoms",
                    c.id(),
                    c.kind().name()
                )));
            }
        }
        Ok(())
    }
}

/// Radius of a sphere holding `n_atoms` at globular-protein packing density.
pub fn confinement_radius(n_atoms: usize) -> f64 {
    (3.0 * n_atoms as f64 * VOLUME_PER_ATOM / (4.0 * std::f64::consts::PI)).cbrt()
}

/// Self-avoiding random chain of `n_atoms` points, folded inside the sphere
/// of [`confinement_radius`] around the first atom.
pub fn generate_target(n_atoms: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if n_atoms < 2 {
        return Err(Error::InvalidArgument("a target needs at least 2 atoms".into()));
    }
    let mut rng = seeded_rng(seed, stream::TARGET);
    let min2 = MIN_NONBONDED * MIN_NONBONDED;
    let r2 = confinement_radius(n_atoms).powi(2);
    'restart: for _ in 0..RESTARTS {
        let mut chain: Vec<[f64; 3]> = vec![[0.0; 3]];
        while chain.len() < n_atoms {
            let last = *chain.last().unwrap();
            let mut placed = false;
            for _ in 0..STEP_ATTEMPTS {
                let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                let p =
                    [last[0] + BOND_LENGTH * dir[0], last[1] + BOND_LENGTH * dir[1], last[2] + BOND_LENGTH * dir[2]];
                if p.iter().map(|c| c * c).sum::<f64>() > r2 {
                    continue;
                }
                let clash = chain[..chain.len() - 1].iter().any(|q| {
                    let d2: f64 = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum();
                    d2 < min2
                });
                if !clash {
                    chain.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return Ok(chain);
    }
    Err(Error::GenerationFailed(format!("no self-avoiding chain of {n_atoms} atoms after {RESTARTS} restarts")))
}

/// One exact distance constraint per unordered atom pair, ids in pair order.
pub fn enumerate_distances(target: &[[f64; 3]]) -> Result<Vec<Constraint>> {
    if target.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 atoms".into()));
    }
    let n = target.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (0..3).map(|a| (target[i][a] - target[j][a]).powi(2)).sum::<f64>().sqrt();
            out.push(Constraint::distance(out.len() as u64, i, j, d, EXACT_VARIANCE)?);
        }
    }
    Ok(out)
}

/// Uniform sample without replacement of `round(fraction · n)` constraints,
/// kept in their original order.
pub fn sample_fraction(constraints: &[Constraint], fraction: f64, seed: u64) -> Result<Vec<Constraint>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    let n = constraints.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!("fraction {fraction} of {n} constraints selects nothing")));
    }
    let mut rng = seeded_rng(seed, stream::SAMPLE);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| constraints[i].clone()).collect())
}

/// Perturbs measured values and sets declared variances per `spec`.
pub fn apply_noise(constraints: &[Constraint], spec: &NoiseSpec) -> Result<Vec<Constraint>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, stream::NOISE);
    constraints
        .iter()
        .map(|c| match spec.model {
            NoiseModel::Exact { variance } => c.with_variance(variance),
            NoiseModel::UniformVarianceGaussian { max_variance } => {
                // the floor is applied before drawing so the declared variance is the one used
                let v = c.with_variance(rng.random_range(0.0..max_variance))?.variance();
                let noise =
                    Normal::new(0.0, v.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(&mut rng);
                Constraint::new(c.id(), c.kind(), c.measured() + noise, v)
            }
            NoiseModel::PositiveBias { mean_shift } => {
                let shift = rng.random_range(0.0..2.0 * mean_shift);
                Constraint::new(c.id(), c.kind(), c.measured() + shift, mean_shift * mean_shift)
            }
        })
        .collect()
}
