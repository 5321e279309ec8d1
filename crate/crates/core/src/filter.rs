//! Extended, iterated Kalman update for a single scalar constraint.
//!
//! For a prior `(x_old, C)` and measurement `z` with variance `v`, each inner
//! pass relinearizes `h` at the current iterate `x_i`:
//!
//! ```text
//! K_i     = C Hᵢᵀ / (Hᵢ C Hᵢᵀ + v)
//! x_{i+1} = x_old + K_i [ z − h(x_i) − Hᵢ (x_old − x_i) ]
//! ```
//!
//! starting from `x_0 = x_old`. The covariance is updated once, after the
//! inner loop, as `C − K H C` using the gain and Jacobian of the final pass,
//! then symmetrized.

use crate::constraints::{self, Prediction, SparseJacobian};
use crate::error::{Error, Result};
use crate::model::{Constraint, CovarianceMatrix, SolveConfig, StateVector};

/// A scalar measurement with a differentiable observation model.
///
/// [`Constraint`] is the production implementation; the trait exists so that
/// the update can also be driven by simple linear models.
pub trait Observation {
    fn measured(&self) -> f64;
    fn variance(&self) -> f64;
    fn predict(&self, x: &StateVector) -> Result<Prediction>;

    /// `z − h`. Periodic observations override this to wrap the difference.
    fn residual(&self, predicted: f64) -> f64 {
        self.measured() - predicted
    }
}

impl Observation for Constraint {
    fn measured(&self) -> f64 {
        Constraint::measured(self)
    }

    fn variance(&self) -> f64 {
        Constraint::variance(self)
    }

    fn predict(&self, x: &StateVector) -> Result<Prediction> {
        constraints::predict(self, x)
    }

    fn residual(&self, predicted: f64) -> f64 {
        constraints::residual(self.kind(), Constraint::measured(self), predicted)
    }
}

/// Result of introducing one constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub state: StateVector,
    pub covariance: CovarianceMatrix,
    /// Inner passes performed (0 when skipped).
    pub inner_iterations: usize,
    /// `z − h(x_old)`; NaN when skipped.
    pub innovation: f64,
    pub skipped: bool,
}

/// Summary of an in-place update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub inner_iterations: usize,
    pub innovation: f64,
    pub skipped: bool,
}

/// `C Hᵀ` and `H C Hᵀ + v`, touching only the columns in the support of `H`.
fn gain_terms(cov: &CovarianceMatrix, h: &SparseJacobian, v: f64) -> Result<(Vec<f64>, f64)> {
    let c = cov.as_matrix();
    let mut cht = vec![0.0; cov.dim()];
    for &(k, hk) in h.entries() {
        for (acc, &ck) in cht.iter_mut().zip(c.column(k).iter()) {
            *acc += hk * ck;
        }
    }
    let denom = h.dot(&cht) + v;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::NumericalBreakdown(format!("innovation variance H C Hᵀ + v = {denom:e} is not positive")));
    }
    Ok((cht, denom))
}

/// Kalman gain `C Hᵀ (H C Hᵀ + v)⁻¹` for a scalar measurement.
pub fn kalman_gain(cov: &CovarianceMatrix, h: &SparseJacobian, v: f64) -> Result<Vec<f64>> {
    if !(v > 0.0) {
        return Err(Error::InvalidArgument(format!("measurement variance must be positive, got {v}")));
    }
    if let Some(&(k, _)) = h.entries().iter().find(|&&(k, _)| k >= cov.dim()) {
        return Err(Error::InvalidArgument(format!("jacobian index {k} out of range for dimension {}", cov.dim())));
    }
    let (cht, denom) = gain_terms(cov, h, v)?;
    Ok(cht.into_iter().map(|c| c / denom).collect())
}

fn check_dims(x: &StateVector, cov: &CovarianceMatrix) -> Result<()> {
    if x.dim() != cov.dim() {
        return Err(Error::InvalidArgument(format!(
            "state has dimension {} but covariance has {}",
            x.dim(),
            cov.dim()
        )));
    }
    Ok(())
}

/// Introduces one observation into `(x, cov)`, updating both in place.
///
/// If the observation model is singular at `x`, nothing changes and the
/// result is flagged as skipped.
pub fn apply_in_place<O: Observation + ?Sized>(
    x: &mut StateVector,
    cov: &mut CovarianceMatrix,
    obs: &O,
    cfg: &SolveConfig,
) -> Result<UpdateStats> {
    check_dims(x, cov)?;
    let v = obs.variance();
    if !(v > 0.0) {
        return Err(Error::InvalidArgument(format!("measurement variance must be positive, got {v}")));
    }

    let mut pred = match obs.predict(x) {
        Ok(p) => p,
        Err(Error::SingularGeometry(_)) => {
            return Ok(UpdateStats { inner_iterations: 0, innovation: f64::NAN, skipped: true })
        }
        Err(e) => return Err(e),
    };
    let innovation = obs.residual(pred.value);

    let prior = x.as_slice().to_vec();
    let mut iterate = prior.clone();
    let mut passes = 0;
    let (gain, cht) = loop {
        passes += 1;
        let (cht, denom) = gain_terms(cov, &pred.jacobian, v)?;
        // linearization offset H (x_old − x_i)
        let offset: f64 = pred.jacobian.entries().iter().map(|&(k, hk)| hk * (prior[k] - iterate[k])).sum();
        let scale = (obs.residual(pred.value) - offset) / denom;
        let gain: Vec<f64> = cht.iter().map(|c| c / denom).collect();

        let mut change = 0.0_f64;
        for ((xi, &p), &g) in iterate.iter_mut().zip(&prior).zip(&cht) {
            let next = p + g * scale;
            change = change.max((next - *xi).abs());
            *xi = next;
        }
        if !change.is_finite() {
            return Err(Error::NumericalBreakdown("state update is not finite".into()));
        }
        if change < cfg.inner_tol || passes >= cfg.inner_max_iters {
            break (gain, cht);
        }
        match obs.predict(&StateVector::from_vec_unchecked(iterate.clone())) {
            Ok(p) => pred = p,
            Err(Error::SingularGeometry(_)) => break (gain, cht),
            Err(e) => return Err(e),
        }
    };

    // C is symmetric, so H C = (C Hᵀ)ᵀ and the update is a rank-1 downdate.
    let c = cov.matrix_mut();
    for (j, &hc) in cht.iter().enumerate() {
        if hc == 0.0 {
            continue;
        }
        for (cij, &ki) in c.column_mut(j).iter_mut().zip(&gain) {
            *cij -= ki * hc;
        }
    }
    cov.symmetrize();

    *x = StateVector::from_vec_unchecked(iterate);
    Ok(UpdateStats { inner_iterations: passes, innovation, skipped: false })
}

/// Introduces one constraint into `(x, cov)` and returns the posterior.
pub fn apply_constraint(
    x: &StateVector,
    cov: &CovarianceMatrix,
    c: &Constraint,
    cfg: &SolveConfig,
) -> Result<UpdateOutcome> {
    c.check_atoms(x.n_atoms())?;
    let mut state = x.clone();
    let mut covariance = cov.clone();
    let stats = apply_in_place(&mut state, &mut covariance, c, cfg)?;
    Ok(UpdateOutcome {
        state,
        covariance,
        inner_iterations: stats.inner_iterations,
        innovation: stats.innovation,
        skipped: stats.skipped,
    })
}
