//! Observation models `h(x)` and their sparse Jacobians.
//!
//! Every model depends on the coordinates of two to four atoms, so the
//! Jacobian row `H = ∂h/∂x` has 6, 9 or 12 non-zero entries.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::model::{Constraint, ConstraintKind, StateVector};

/// Minimum separation between atoms that share a constraint, Å.
pub const EPS_SEP: f64 = 1e-8;

/// Minimum sine of the angle between bond vectors before they count as parallel.
pub const EPS_PAR: f64 = 1e-10;

/// Row Jacobian with support on the coordinates of a constraint's atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    entries: Vec<(usize, f64)>,
}

impl SparseJacobian {
    /// Entries must have strictly increasing flat indices.
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument("jacobian indices must be strictly increasing".into()));
        }
        Ok(Self { entries })
    }

    /// Builds the row from per-atom gradients; entries end up sorted by flat index.
    fn from_atom_gradients(grads: &mut [(usize, Vector3<f64>)]) -> Self {
        grads.sort_by_key(|(atom, _)| *atom);
        let entries = grads.iter().flat_map(|(atom, g)| (0..3).map(move |axis| (3 * atom + axis, g[axis]))).collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `H · v` for a dense vector `v`.
    pub fn dot(&self, v: &[f64]) -> f64 {
        self.entries.iter().map(|&(k, h)| h * v[k]).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut row = vec![0.0; dim];
        for &(k, h) in &self.entries {
            row[k] = h;
        }
        row
    }
}

/// Predicted measurement `h(x)` and its linearization `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub jacobian: SparseJacobian,
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

fn check_index(x: &StateVector, atoms: &[usize]) -> Result<()> {
    let n = x.n_atoms();
    if let Some(i) = atoms.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!("atom index {i} out of range for {n} atoms")));
    }
    for (a, i) in atoms.iter().enumerate() {
        if atoms[..a].contains(i) {
            return Err(Error::InvalidArgument(format!("atom index {i} repeated")));
        }
    }
    Ok(())
}

/// Euclidean distance between atoms `i` and `j`.
pub fn eval_distance(x: &StateVector, i: usize, j: usize) -> Result<Prediction> {
    check_index(x, &[i, j])?;
    let d = x.atom(i) - x.atom(j);
    let dist = d.norm();
    if dist < EPS_SEP {
        return Err(Error::SingularGeometry(format!("atoms {i} and {j} are {dist:e} Å apart")));
    }
    let g = d / dist;
    Ok(Prediction { value: dist, jacobian: SparseJacobian::from_atom_gradients(&mut [(i, g), (j, -g)]) })
}

/// Angle at vertex `j` between the rays `j→i` and `j→k`, in `[0, π]`.
pub fn eval_angle(x: &StateVector, i: usize, j: usize, k: usize) -> Result<Prediction> {
    check_index(x, &[i, j, k])?;
    let u = x.atom(i) - x.atom(j);
    let w = x.atom(k) - x.atom(j);
    let (lu, lw) = (u.norm(), w.norm());
    if lu < EPS_SEP || lw < EPS_SEP {
        return Err(Error::SingularGeometry(format!("angle {i}-{j}-{k} has a bond shorter than {EPS_SEP:e} Å")));
    }
    let (uh, wh) = (u / lu, w / lw);
    let sin = uh.cross(&wh).norm();
    let cos = uh.dot(&wh);
    if sin < EPS_PAR {
        return Err(Error::SingularGeometry(format!("angle {i}-{j}-{k} has parallel bond vectors")));
    }
    let value = sin.atan2(cos);
    // dθ/du = −(ŵ − cosθ·û) / (|u| sinθ), likewise for w
    let gi = -(wh - uh * cos) / (lu * sin);
    let gk = -(uh - wh * cos) / (lw * sin);
    let gj = -(gi + gk);
    Ok(Prediction { value, jacobian: SparseJacobian::from_atom_gradients(&mut [(i, gi), (j, gj), (k, gk)]) })
}

/// Signed torsion of `i-j-k-l` about the `j-k` bond, in `(−π, π]`.
///
/// Cis-planar is 0, trans-planar is π; the sign follows the IUPAC convention.
pub fn eval_dihedral(x: &StateVector, i: usize, j: usize, k: usize, l: usize) -> Result<Prediction> {
    check_index(x, &[i, j, k, l])?;
    let f = x.atom(i) - x.atom(j);
    let g = x.atom(j) - x.atom(k);
    let h = x.atom(l) - x.atom(k);
    let (lf, lg, lh) = (f.norm(), g.norm(), h.norm());
    if lf < EPS_SEP || lg < EPS_SEP || lh < EPS_SEP {
        return Err(Error::SingularGeometry(format!("dihedral {i}-{j}-{k}-{l} has a bond shorter than {EPS_SEP:e} Å")));
    }
    let a = f.cross(&g);
    let b = h.cross(&g);
    let (la, lb) = (a.norm(), b.norm());
    if la < EPS_PAR * lf * lg || lb < EPS_PAR * lh * lg {
        return Err(Error::SingularGeometry(format!("dihedral {i}-{j}-{k}-{l} has collinear bond vectors")));
    }
    let value = wrap_angle(b.cross(&a).dot(&g).atan2(lg * a.dot(&b)));

    let (a2, b2) = (la * la, lb * lb);
    let fg = f.dot(&g) / (a2 * lg);
    let hg = h.dot(&g) / (b2 * lg);
    let gi = -a * (lg / a2);
    let gl = b * (lg / b2);
    let gj = a * (lg / a2) + a * fg - b * hg;
    let gk = b * hg - a * fg - b * (lg / b2);
    Ok(Prediction { value, jacobian: SparseJacobian::from_atom_gradients(&mut [(i, gi), (j, gj), (k, gk), (l, gl)]) })
}

/// Evaluates the constraint's observation model at `x`.
pub fn predict(c: &Constraint, x: &StateVector) -> Result<Prediction> {
    match c.kind() {
        ConstraintKind::Distance([i, j]) => eval_distance(x, i, j),
        ConstraintKind::Angle([i, j, k]) => eval_angle(x, i, j, k),
        ConstraintKind::Dihedral([i, j, k, l]) => eval_dihedral(x, i, j, k, l),
    }
}

/// `z − h`, wrapped into `(−π, π]` for dihedrals.
pub fn residual(kind: ConstraintKind, measured: f64, predicted: f64) -> f64 {
    match kind {
        ConstraintKind::Dihedral(_) => wrap_angle(measured - predicted),
        _ => measured - predicted,
    }
}

/// `(z − h(x)) / √v`, in standard deviations of the measurement noise.
pub fn standardized_error(c: &Constraint, x: &StateVector) -> Result<f64> {
    let p = predict(c, x)?;
    Ok(residual(c.kind(), c.measured(), p.value) / c.variance().sqrt())
}
