//! Core value types: the coordinate state, its covariance, scalar constraints,
//! and solver configuration.
//!
//! Coordinates are atom-major: atom `i` occupies flat indices `3i`, `3i+1`,
//! `3i+2` for x, y and z.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::OrderingStrategy;

/// Smallest variance a constraint may declare (Å² or rad²).
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Absolute symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Independent random streams derived from one user seed.
pub(crate) mod stream {
    pub const INIT_STATE: u64 = 1;
    pub const ORDERING: u64 = 2;
    pub const TARGET: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const NOISE: u64 = 5;
}

/// Deterministic, platform-independent generator for `(seed, stream)`.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean coordinates of `N` atoms as a flat `3N` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    coords: Vec<f64>,
}

impl StateVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!(
                "state length {} is not a positive multiple of 3",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("state entry {pos} is not finite")));
        }
        Ok(Self { coords })
    }

    pub fn from_points(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().flatten().copied().collect())
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn atom(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.coords[3 * i], self.coords[3 * i + 1], self.coords[3 * i + 2])
    }

    pub fn to_points(&self) -> Vec<[f64; 3]> {
        self.coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    /// Infinity norm of `self - other`.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.coords.iter().zip(&other.coords).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(coords.len().is_multiple_of(3));
        Self { coords }
    }
}

/// Dense `3N × 3N` variance/covariance matrix of the state, in Å².
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Wraps a dense matrix after checking shape, finiteness, symmetry and the
    /// sign of the diagonal.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        let (r, c) = entries.shape();
        if r != c || r == 0 || r % 3 != 0 {
            return Err(Error::InvalidArgument(format!("covariance must be square with dimension 3N, got {r}x{c}")));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        let cov = Self { entries };
        let asym = cov.max_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidArgument(format!("covariance is not symmetric (max |C - Cᵀ| = {asym:e})")));
        }
        if cov.min_diagonal() < -SYMMETRY_TOL {
            return Err(Error::InvalidArgument("covariance has a negative diagonal entry".into()));
        }
        Ok(cov)
    }

    pub fn n_atoms(&self) -> usize {
        self.entries.nrows() / 3
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[(row, col)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries[(i, i)]).collect()
    }

    pub fn min_diagonal(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries[(i, i)]).fold(f64::INFINITY, f64::min)
    }

    /// `‖C − Cᵀ‖∞` taken entrywise.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for j in 0..n {
            for i in (j + 1)..n {
                worst = worst.max((self.entries[(i, j)] - self.entries[(j, i)]).abs());
            }
        }
        worst
    }

    /// The 3×3 block `C(x_i x_j)`: rows `3i..3i+2`, columns `3j..3j+2`.
    pub fn atom_block(&self, i: usize, j: usize) -> Result<Matrix3<f64>> {
        let n = self.n_atoms();
        if i >= n || j >= n {
            return Err(Error::InvalidArgument(format!("atom block ({i}, {j}) out of range for {n} atoms")));
        }
        Ok(self.entries.fixed_view::<3, 3>(3 * i, 3 * j).into_owned())
    }

    /// Replaces `C` with `(C + Cᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.dim();
        for j in 0..n {
            for i in (j + 1)..n {
                let avg = 0.5 * (self.entries[(i, j)] + self.entries[(j, i)]);
                self.entries[(i, j)] = avg;
                self.entries[(j, i)] = avg;
            }
        }
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.entries
    }
}

/// Observation model of a constraint together with the atoms it touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    /// Euclidean distance between two atoms (Å).
    Distance([usize; 2]),
    /// Angle at the middle atom between the rays to the outer atoms (rad).
    Angle([usize; 3]),
    /// Signed torsion angle about the bond between the middle two atoms (rad).
    Dihedral([usize; 4]),
}

impl ConstraintKind {
    pub fn atoms(&self) -> &[usize] {
        match self {
            ConstraintKind::Distance(a) => a,
            ConstraintKind::Angle(a) => a,
            ConstraintKind::Dihedral(a) => a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConstraintKind::Distance(_) => "distance",
            ConstraintKind::Angle(_) => "angle",
            ConstraintKind::Dihedral(_) => "dihedral",
        }
    }

    pub fn arity(&self) -> usize {
        self.atoms().len()
    }

    /// Builds a kind from its name and index list, checking the arity.
    pub fn from_parts(name: &str, atoms: &[usize]) -> Result<Self> {
        let arity_err = || Error::InvalidArgument(format!("{name} constraint given {} atom indices", atoms.len()));
        match name {
            "distance" => Ok(Self::Distance(atoms.try_into().map_err(|_| arity_err())?)),
            "angle" => Ok(Self::Angle(atoms.try_into().map_err(|_| arity_err())?)),
            "dihedral" => Ok(Self::Dihedral(atoms.try_into().map_err(|_| arity_err())?)),
            other => Err(Error::InvalidArgument(format!("unknown constraint kind `{other}`"))),
        }
    }
}

/// One scalar measurement `z = h(x) + v` with Gaussian noise of variance `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    id: u64,
    kind: ConstraintKind,
    measured: f64,
    variance: f64,
}

impl Constraint {
    /// Variances below [`VARIANCE_FLOOR`] (including zero) are raised to it.
    pub fn new(id: u64, kind: ConstraintKind, measured: f64, variance: f64) -> Result<Self> {
        let atoms = kind.atoms();
        for (a, &i) in atoms.iter().enumerate() {
            if atoms[..a].contains(&i) {
                return Err(Error::InvalidArgument(format!("constraint {id}: atom index {i} repeated")));
            }
        }
        if !measured.is_finite() {
            return Err(Error::InvalidArgument(format!("constraint {id}: measured value is not finite")));
        }
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "constraint {id}: variance {variance} is not a non-negative finite number"
            )));
        }
        Ok(Self { id, kind, measured, variance: variance.max(VARIANCE_FLOOR) })
    }

    pub fn distance(id: u64, i: usize, j: usize, measured: f64, variance: f64) -> Result<Self> {
        Self::new(id, ConstraintKind::Distance([i, j]), measured, variance)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn kind(&self) -> ConstraintKind {
        self.kind
    }

    pub fn atoms(&self) -> &[usize] {
        self.kind.atoms()
    }

    pub fn measured(&self) -> f64 {
        self.measured
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn with_measured(&self, measured: f64) -> Result<Self> {
        Self::new(self.id, self.kind, measured, self.variance)
    }

    pub fn with_variance(&self, variance: f64) -> Result<Self> {
        Self::new(self.id, self.kind, self.measured, variance)
    }

    /// Checks that every atom index is below `n_atoms`.
    pub fn check_atoms(&self, n_atoms: usize) -> Result<()> {
        match self.atoms().iter().find(|&&i| i >= n_atoms) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "constraint {}: atom index {i} out of range for {n_atoms} atoms",
                self.id
            ))),
            None => Ok(()),
        }
    }
}

/// Parameters of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub ordering: OrderingStrategy,
    pub max_outer_cycles: usize,
    /// Stop when the mean |standardized error| falls to this (SD units).
    pub avg_stop: f64,
    /// Stop when the largest |standardized error| falls to this (SD units).
    pub max_stop: f64,
    /// Inner-loop exit tolerance on the state change, Å (infinity norm).
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    /// Initial variance of every coordinate, Å².
    pub init_variance: f64,
    pub init_coord_range: (f64, f64),
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            ordering: OrderingStrategy::Sorted,
            max_outer_cycles: 100,
            avg_stop: 0.3,
            max_stop: 1.0,
            inner_tol: 0.01,
            inner_max_iters: 3,
            init_variance: 100.0,
            init_coord_range: (0.0, 50.0),
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.inner_max_iters < 1 {
            return bad("inner_max_iters must be at least 1");
        }
        if self.max_outer_cycles < 1 {
            return bad("max_outer_cycles must be at least 1");
        }
        if !(self.avg_stop > 0.0 && self.max_stop > 0.0 && self.inner_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.init_variance > 0.0) || !self.init_variance.is_finite() {
            return bad("init_variance must be positive");
        }
        let (lo, hi) = self.init_coord_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("init_coord_range must satisfy low <= high");
        }
        Ok(())
    }
}

/// Summary of one outer cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    /// Mean |E| over evaluable constraints, SD units.
    pub avg_error: f64,
    /// Max |E| over evaluable constraints, SD units.
    pub max_error: f64,
    pub rmsd_to_target: Option<f64>,
    /// Constraints skipped or not evaluable because of singular geometry.
    pub skipped: usize,
    /// Seconds spent in the cycle.
    pub wall_time: f64,
}

/// Random starting coordinates, each drawn uniformly from `range`.
pub fn init_state(n_atoms: usize, range: (f64, f64), seed: u64) -> Result<StateVector> {
    if n_atoms == 0 {
        return Err(Error::InvalidArgument("n_atoms must be at least 1".into()));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::InvalidArgument(format!("invalid coordinate range ({lo}, {hi})")));
    }
    let dist =
        Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidArgument(format!("invalid coordinate range: {e}")))?;
    let mut rng = seeded_rng(seed, stream::INIT_STATE);
    let coords = (0..3 * n_atoms).map(|_| dist.sample(&mut rng)).collect();
    StateVector::new(coords)
}

/// Diagonal prior covariance `sigma2 · I` of dimension `3N`.
pub fn init_covariance(n_atoms: usize, sigma2: f64) -> Result<CovarianceMatrix> {
    if n_atoms == 0 {
        return Err(Error::InvalidArgument("n_atoms must be at least 1".into()));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok(CovarianceMatrix { entries: DMatrix::from_diagonal_element(3 * n_atoms, 3 * n_atoms, sigma2) })
}
