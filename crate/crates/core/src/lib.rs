//! Deterministic mean-field-type control on particle ensembles.
//!
//! States are square-integrable random variables represented as equal-weight
//! particle ensembles in `R^n`. The dynamics are `dX/ds = v(s)` with a
//! quadratic control penalty, running cost `E f(X, L_X)` and terminal cost
//! `E h(X, L_X)`. The crate provides:
//!
//! - the ensemble representation with Hilbert-space and Wasserstein-2
//!   geometry ([`ensemble`], [`wasserstein`]);
//! - quadratic and kernel-interaction cost functionals with gradients,
//!   functional derivatives and certified Lipschitz constants
//!   ([`functionals`]);
//! - a contraction fixed-point solver for the state/adjoint two-point
//!   boundary value problem, with the value function and its derivatives
//!   ([`solver`], [`particle_value`]);
//! - a closed-form Riccati oracle for the fully quadratic case, including
//!   the master-equation fields and linearized responses ([`riccati`]);
//! - residual/estimate/oracle audit suites binding the generic solver to
//!   the closed forms ([`audit`]);
//! - a batch CLI (`mftc`) with config-driven solves, CSV output and SVG
//!   plots ([`config`], [`output`], [`plot`]).

pub mod audit;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod functionals;
pub mod linalg;
pub mod output;
pub mod particle_value;
pub mod plot;
pub mod riccati;
pub mod solver;
pub mod wasserstein;

pub use ensemble::{Ensemble, TimeGrid};
pub use error::{Error, Result};
pub use functionals::{CostFunctional, KernelCost, QuadraticCost, QuadraticModel};
pub use riccati::RiccatiTables;
pub use solver::{SolverConfig, TrajectoryBundle};
pub use wasserstein::{wasserstein2, W2Result};
