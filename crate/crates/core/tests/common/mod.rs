//! Independent reference implementations used by the integration tests.
//!
//! The oracles here do not call the library's numerical routines, except
//! where a helper is explicitly fed a closure or builds test inputs.

#![allow(dead_code)]

use dikf::constraints::{predict, Prediction, SparseJacobian};
use dikf::filter::Observation;
use dikf::{Constraint, ConstraintKind, StateVector};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn v3(p: &[f64], atom: usize) -> Vector3<f64> {
    Vector3::new(p[3 * atom], p[3 * atom + 1], p[3 * atom + 2])
}

pub fn distance(p: &[f64], i: usize, j: usize) -> f64 {
    (v3(p, i) - v3(p, j)).norm()
}

/// Vertex angle at `j` from the law of cosines.
pub fn angle(p: &[f64], i: usize, j: usize, k: usize) -> f64 {
    let a = distance(p, i, j);
    let b = distance(p, j, k);
    let c = distance(p, i, k);
    ((a * a + b * b - c * c) / (2.0 * a * b)).clamp(-1.0, 1.0).acos()
}

/// Torsion about j→k, positive when the near bond turns clockwise onto the
/// far bond (viewed from j towards k). Built from bond normals.
pub fn dihedral(p: &[f64], i: usize, j: usize, k: usize, l: usize) -> f64 {
    let b1 = v3(p, j) - v3(p, i);
    let b2 = v3(p, k) - v3(p, j);
    let b3 = v3(p, l) - v3(p, k);
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    let y = b2.normalize().dot(&n1.cross(&n2));
    y.atan2(n1.dot(&n2))
}

pub fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = a - two_pi * (a / two_pi).round();
    if r <= -std::f64::consts::PI {
        r + two_pi
    } else {
        r
    }
}

/// Central finite-difference gradient. `periodic` wraps value differences.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64, periodic: bool) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + eps;
            let up = f(&p);
            p[k] = x[k] - eps;
            let down = f(&p);
            p[k] = x[k];
            let diff = if periodic { wrap(up - down) } else { up - down };
            diff / (2.0 * eps)
        })
        .collect()
}

pub fn random_points(rng: &mut impl Rng, n: usize, half_width: f64) -> Vec<f64> {
    (0..3 * n).map(|_| rng.random_range(-half_width..half_width)).collect()
}

/// Random symmetric positive definite matrix `A Aᵀ + d I`.
pub fn random_spd(rng: &mut impl Rng, dim: usize, scale: f64, ridge: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-scale..scale));
    let m = &a * a.transpose() + DMatrix::identity(dim, dim) * ridge;
    (&m + m.transpose()) * 0.5
}

/// Brute-force iterated update with dense matrices.
///
/// `model(x)` returns `(h(x), H(x))` with `H` as a dense row. The loop keeps
/// the prior fixed and relinearizes at each iterate; the covariance uses the
/// last gain and Jacobian.
#[allow(clippy::too_many_arguments)]
pub fn dense_iterated_update(
    x_old: &DVector<f64>,
    c: &DMatrix<f64>,
    model: impl Fn(&DVector<f64>) -> (f64, DVector<f64>),
    z: f64,
    v: f64,
    periodic: bool,
    tol: f64,
    max_iters: usize,
) -> (DVector<f64>, DMatrix<f64>, usize) {
    let n = x_old.len();
    let mut xi = x_old.clone();
    let mut iters = 0;
    loop {
        iters += 1;
        let (h, hrow) = model(&xi);
        let hm = DMatrix::from_row_slice(1, n, hrow.as_slice());
        let s = (&hm * c * hm.transpose())[(0, 0)] + v;
        let k: DMatrix<f64> = c * hm.transpose() / s;
        let innov = if periodic { wrap(z - h) } else { z - h };
        let lin = (&hm * (x_old - &xi))[(0, 0)];
        let next = x_old + k.column(0) * (innov - lin);
        let change = (&next - &xi).amax();
        xi = next;
        if change < tol || iters >= max_iters {
            let post = (DMatrix::identity(n, n) - &k * &hm) * c;
            return (xi, post, iters);
        }
    }
}

fn rmsd_after(r: &Matrix3<f64>, est: &[Vector3<f64>], tgt: &[Vector3<f64>]) -> f64 {
    let s: f64 = est.iter().zip(tgt).map(|(e, t)| (r * e - t).norm_squared()).sum();
    (s / est.len() as f64).sqrt()
}

fn centered(points: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n;
    points.iter().map(|p| Vector3::from(*p) - c).collect()
}

fn rot(ax: f64, ay: f64, az: f64) -> Matrix3<f64> {
    Rotation3::from_euler_angles(ax, ay, az).into_inner()
}

/// Best-fit RMSD by brute-force search over rotations: a coarse Euler-angle
/// grid, then a shrinking coordinate search around the best few cells.
/// Translation is removed by centering, which is optimal for any rotation.
pub fn grid_search_rmsd(est: &[[f64; 3]], tgt: &[[f64; 3]], allow_reflection: bool) -> f64 {
    let e = centered(est);
    let t = centered(tgt);
    let mut best = search_rotations(&e, &t);
    if allow_reflection {
        let mirrored: Vec<Vector3<f64>> = e.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        best = best.min(search_rotations(&mirrored, &t));
    }
    best
}

fn search_rotations(e: &[Vector3<f64>], t: &[Vector3<f64>]) -> f64 {
    use std::f64::consts::PI;
    let steps = 24;
    let h = 2.0 * PI / steps as f64;
    let mut cells: Vec<(f64, [f64; 3])> = Vec::new();
    for a in 0..steps {
        for b in 0..steps / 2 + 1 {
            for c in 0..steps {
                let ang = [a as f64 * h - PI, b as f64 * h - PI / 2.0, c as f64 * h - PI];
                cells.push((rmsd_after(&rot(ang[0], ang[1], ang[2]), e, t), ang));
            }
        }
    }
    cells.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best = f64::INFINITY;
    for &(start, ang) in cells.iter().take(12) {
        let mut cur = (start, ang);
        let mut step = h;
        while step > 1e-9 {
            let mut improved = false;
            for axis in 0..3 {
                for sign in [-1.0, 1.0] {
                    let mut cand = cur.1;
                    cand[axis] += sign * step;
                    let r = rmsd_after(&rot(cand[0], cand[1], cand[2]), e, t);
                    if r < cur.0 {
                        cur = (r, cand);
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best = best.min(cur.0);
    }
    best
}

/// Random proper rotation from a uniformly drawn axis and angle.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

pub fn transform(points: &[[f64; 3]], r: &Matrix3<f64>, t: [f64; 3]) -> Vec<[f64; 3]> {
    points
        .iter()
        .map(|p| {
            let q = r * Vector3::from(*p) + Vector3::from(t);
            [q.x, q.y, q.z]
        })
        .collect()
}

/// `E|N(0, v)|` averaged over `v ~ U(0, v_max)`, by Simpson's rule.
pub fn mean_abs_gaussian_uniform_variance(v_max: f64) -> f64 {
    let n = 20_000;
    let h = v_max / n as f64;
    let f = |v: f64| (2.0 * v / std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(v_max);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / v_max
}

/// Direct measurement of one coordinate: the linear observation model.
pub struct Coordinate {
    pub index: usize,
    pub z: f64,
    pub v: f64,
}

impl Observation for Coordinate {
    fn measured(&self) -> f64 {
        self.z
    }
    fn variance(&self) -> f64 {
        self.v
    }
    fn predict(&self, x: &StateVector) -> dikf::Result<Prediction> {
        Ok(Prediction { value: x.as_slice()[self.index], jacobian: SparseJacobian::new(vec![(self.index, 1.0)])? })
    }
}

/// Random distance, angle or dihedral on distinct atoms of `x`, with a
/// measurement near the current value. `None` if the geometry is singular.
pub fn random_constraint(rng: &mut impl Rng, n: usize, x: &[f64]) -> Option<Constraint> {
    let mut atoms: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        atoms.swap(i, rng.random_range(0..=i));
    }
    let kind = match rng.random_range(0..3) {
        1 if n >= 3 => ConstraintKind::Angle([atoms[0], atoms[1], atoms[2]]),
        2 if n >= 4 => ConstraintKind::Dihedral([atoms[0], atoms[1], atoms[2], atoms[3]]),
        _ => ConstraintKind::Distance([atoms[0], atoms[1]]),
    };
    let probe = Constraint::new(0, kind, 0.0, 1.0).ok()?;
    let h = predict(&probe, &StateVector::new(x.to_vec()).unwrap()).ok()?;
    let z = h.value + rng.random_range(-0.8..0.8);
    let v = 10f64.powf(rng.random_range(-3.0..0.5));
    Constraint::new(1, kind, z, v).ok()
}
