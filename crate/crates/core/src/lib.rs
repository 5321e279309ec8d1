//! Bayesian estimation of 3D point coordinates and their full covariance from
//! noisy scalar geometric constraints.
//!
//! The engine is an extended, iterated Kalman filter that introduces
//! constraints one at a time, wrapped in an outer loop that resets ("reheats")
//! the covariance after each pass and reintroduces the least satisfied
//! constraints first. Repeating search/reheat/search lets low-variance
//! constraints pull the estimate out of local optima.
//!
//! Module map:
//!
//! - [`model`]: state vector, covariance matrix, constraints, solver configuration.
//! - [`constraints`]: observation models (distance, angle, dihedral) with sparse Jacobians.
//! - [`filter`]: the iterated scalar Kalman update.
//! - [`scheduler`]: the outer reheat/reorder loop.
//! - [`synth`]: synthetic targets and constraint datasets.
//! - [`eval`]: error statistics, superposition RMSD, covariance maps, uncertainty ellipsoids.
//! - [`io`]: dataset/solution files and trace tables.
//! - [`experiment`]: experiment presets and the reproduction harness.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod filter;
pub mod io;
pub mod model;
pub mod scheduler;
pub mod synth;

pub use error::{Error, Result};
pub use model::{Constraint, ConstraintKind, CovarianceMatrix, CycleReport, SolveConfig, StateVector};
pub use scheduler::{solve, OrderingStrategy, Solution};
