//! Quality measures for a solution: constraint error statistics, RMSD after
//! optimal superposition, the atom-level covariance map, and per-atom
//! uncertainty ellipsoids.

use nalgebra::{DMatrix, Matrix3, Matrix3xX, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::constraints::standardized_error;
use crate::error::{Error, Result};
use crate::model::{Constraint, ConstraintKind, CovarianceMatrix, StateVector};

/// Default histogram bin width, SD units.
pub const DEFAULT_BIN_WIDTH: f64 = 0.5;

/// Eigenvalues of a covariance block above this are clamped to zero; below it
/// the block is rejected.
const EIGEN_CLAMP: f64 = -1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub avg: f64,
    pub max: f64,
    pub bin_width: f64,
    /// `(lower edge, count)` for contiguous bins of |E| starting at 0.
    pub histogram: Vec<(f64, usize)>,
    pub evaluated: usize,
    /// Constraints that could not be evaluated (singular geometry).
    pub skipped: usize,
}

/// Distances alone cannot fix chirality; dihedrals can.
pub fn reflection_allowed(constraints: &[Constraint]) -> bool {
    !constraints.iter().any(|c| matches!(c.kind(), ConstraintKind::Dihedral(_)))
}

/// Mean, max and histogram of |E| over the constraints evaluable at `x`.
pub fn error_stats(constraints: &[Constraint], x: &StateVector, bin_width: f64) -> Result<ErrorStats> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidArgument(format!("bin width must be positive, got {bin_width}")));
    }
    let mut errors = Vec::with_capacity(constraints.len());
    let mut skipped = 0;
    for c in constraints {
        c.check_atoms(x.n_atoms())?;
        match standardized_error(c, x) {
            Ok(e) => errors.push(e.abs()),
            Err(Error::SingularGeometry(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(stats_from_errors(&errors, bin_width, skipped))
}

/// Statistics of precomputed standardized errors (signs are ignored).
pub fn stats_from_errors(errors: &[f64], bin_width: f64, skipped: usize) -> ErrorStats {
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let (avg, max) = if abs.is_empty() {
        (0.0, 0.0)
    } else {
        (abs.iter().sum::<f64>() / abs.len() as f64, abs.iter().copied().fold(0.0, f64::max))
    };
    let mut counts = if abs.is_empty() { Vec::new() } else { vec![0usize; (max / bin_width) as usize + 1] };
    for e in &abs {
        counts[(e / bin_width) as usize] += 1;
    }
    ErrorStats {
        avg,
        max,
        bin_width,
        histogram: counts.into_iter().enumerate().map(|(b, n)| (b as f64 * bin_width, n)).collect(),
        evaluated: abs.len(),
        skipped,
    }
}

/// Rigid motion mapping an estimate onto a target: `target ≈ R · estimate + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superposition {
    /// Row-major orthogonal matrix; determinant −1 only when `reflected`.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub reflected: bool,
    pub rmsd: f64,
}

impl Superposition {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for (row, o) in out.iter_mut().enumerate() {
            *o += r[row][0] * p[0] + r[row][1] * p[1] + r[row][2] * p[2];
        }
        out
    }
}

fn centered(points: &[[f64; 3]]) -> (Matrix3xX<f64>, Vector3<f64>) {
    let m = Matrix3xX::from_fn(points.len(), |r, c| points[c][r]);
    let centroid = m.column_mean();
    let mut c = m;
    for mut col in c.column_iter_mut() {
        col -= &centroid;
    }
    (c, centroid)
}

fn check_rank(m: &Matrix3xX<f64>, which: &str) -> Result<()> {
    let mut s = m.clone().svd(false, false).singular_values;
    s.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if s[1] <= 1e-9 * s[0].max(1.0) {
        return Err(Error::InvalidArgument(format!("{which} coordinates are collinear or coincident")));
    }
    Ok(())
}

/// Least-squares rigid superposition of `estimate` onto `target` (Kabsch).
///
/// With `allow_reflection`, the mirror image of the estimate is also tried
/// and the lower RMSD kept.
pub fn superpose_rmsd(estimate: &[[f64; 3]], target: &[[f64; 3]], allow_reflection: bool) -> Result<Superposition> {
    if estimate.len() != target.len() {
        return Err(Error::InvalidArgument(format!("point counts differ: {} vs {}", estimate.len(), target.len())));
    }
    if estimate.len() < 3 {
        return Err(Error::InvalidArgument("superposition needs at least 3 points".into()));
    }
    let (p, p_mean) = centered(estimate);
    let (q, q_mean) = centered(target);
    check_rank(&p, "estimate")?;
    check_rank(&q, "target")?;

    let cross: Matrix3<f64> = &p * q.transpose();
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();

    let fit = |sign: f64| {
        let rot = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign)) * u.transpose();
        let resid = rot * &p - &q;
        let rmsd = (resid.norm_squared() / estimate.len() as f64).sqrt();
        (rot, rmsd)
    };
    let (mut rot, mut rmsd) = fit(d);
    let mut reflected = false;
    if allow_reflection {
        let (rot_m, rmsd_m) = fit(-d);
        if rmsd_m < rmsd {
            (rot, rmsd, reflected) = (rot_m, rmsd_m, true);
        }
    }
    let t = q_mean - rot * p_mean;
    Ok(Superposition {
        rotation: [
            [rot[(0, 0)], rot[(0, 1)], rot[(0, 2)]],
            [rot[(1, 0)], rot[(1, 1)], rot[(1, 2)]],
            [rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]],
        ],
        translation: [t[0], t[1], t[2]],
        reflected,
        rmsd,
    })
}

/// `N × N` matrix of Frobenius norms of the 3×3 covariance blocks.
pub fn covariance_map(cov: &CovarianceMatrix) -> DMatrix<f64> {
    let n = cov.n_atoms();
    let c = cov.as_matrix();
    DMatrix::from_fn(n, n, |i, j| c.fixed_view::<3, 3>(3 * i, 3 * j).norm())
}

/// Level surface at `k` standard deviations of an atom's 3D Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    /// Descending.
    pub semi_axes: [f64; 3],
    /// Unit direction of each semi-axis.
    pub axes: [[f64; 3]; 3],
}

/// One ellipsoid per atom at `k_sd` standard deviations.
pub fn uncertainty_ellipsoids(x: &StateVector, cov: &CovarianceMatrix, k_sd: f64) -> Result<Vec<Ellipsoid>> {
    if x.n_atoms() != cov.n_atoms() {
        return Err(Error::InvalidArgument(format!("state has {} atoms, covariance {}", x.n_atoms(), cov.n_atoms())));
    }
    if !(k_sd >= 0.0) {
        return Err(Error::InvalidArgument(format!("k_sd must be non-negative, got {k_sd}")));
    }
    (0..x.n_atoms())
        .map(|i| {
            let block = cov.atom_block(i, i)?;
            let sym = (block + block.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym);
            let mut pairs: Vec<(f64, Vector3<f64>)> =
                (0..3).map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned())).collect();
            if let Some((lambda, _)) = pairs.iter().find(|(l, _)| *l < EIGEN_CLAMP) {
                return Err(Error::NumericalBreakdown(format!(
                    "covariance block of atom {i} has eigenvalue {lambda:e}"
                )));
            }
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
            let a = x.atom(i);
            Ok(Ellipsoid {
                center: [a[0], a[1], a[2]],
                semi_axes: [0, 1, 2].map(|k| k_sd * pairs[k].0.max(0.0).sqrt()),
                axes: [0, 1, 2].map(|k| [pairs[k].1[0], pairs[k].1[1], pairs[k].1[2]]),
            })
        })
        .collect()
}
