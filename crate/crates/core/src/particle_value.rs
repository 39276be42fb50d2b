//! Per-particle values along a frozen law path.
//!
//! Once the ensemble problem is solved, the path of the empirical law
//! `m(s) = law(Y(s))` is known. Freezing it decouples the system: for any
//! starting point `x` (not necessarily one of the particles) the single
//! trajectory solves
//!
//! ```text
//! y(s) = x - (s - t)/lambda D_x F_T(y(T), m(T))
//!          - 1/lambda int_t^T D_x F(y(sig), m(sig)) (min(s, sig) - t) dsig
//! ```
//!
//! with `F` the functional derivative of the running cost, and the
//! per-particle value is the plugged-in cost
//!
//! ```text
//! u(x, t) = 1/(2 lambda) int |z(s)|^2 ds
//!           + int F(y(s), m(s)) ds + F_T(y(T), m(T)).
//! ```
//!
//! This is the functional derivative of the value function with respect to
//! the measure, which is what the monotonicity pairing needs.

use nalgebra::DVector;

use crate::ensemble::stable_sum;
use crate::error::{Error, Result};
use crate::functionals::CostFunctional;
use crate::solver::TrajectoryBundle;

/// State and adjoint path of a single particle against a frozen law path.
#[derive(Debug, Clone)]
pub struct ParticlePath {
    pub y: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub iterations: usize,
}

fn vector_kernel_sums(
    g: &[DVector<f64>],
    dt: f64,
    times: &[f64],
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let m = g.len() - 1;
    let t0 = times[0];
    let zero = DVector::zeros(g[0].len());

    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(zero.clone());
    for k in 0..m {
        let mut next = prefix[k].clone();
        next.axpy(dt / 2.0 * (times[k] - t0), &g[k], 1.0);
        next.axpy(dt / 2.0 * (times[k + 1] - t0), &g[k + 1], 1.0);
        prefix.push(next);
    }

    let mut suffix = vec![zero; m + 1];
    for k in (0..m).rev() {
        let mut cur = suffix[k + 1].clone();
        cur.axpy(dt / 2.0, &g[k], 1.0);
        cur.axpy(dt / 2.0, &g[k + 1], 1.0);
        suffix[k] = cur;
    }
    (prefix, suffix)
}

/// Solves the frozen-law fixed point for a single starting point.
pub fn particle_trajectory(
    running: &dyn CostFunctional,
    terminal: &dyn CostFunctional,
    bundle: &TrajectoryBundle,
    x: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ParticlePath> {
    let dim = bundle.state(0).dim();
    if x.len() != dim {
        return Err(Error::shape(format!(
            "query point has dimension {}, law path has {dim}",
            x.len()
        )));
    }
    let grid = bundle.grid();
    let m = grid.intervals();
    let times = grid.nodes();
    let dt = grid.dt();
    let lambda = bundle.lambda();

    let mut y = vec![x.clone(); m + 1];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let g: Vec<DVector<f64>> = (0..=m)
            .map(|k| running.functional_derivative_grad(&y[k], bundle.state(k), 1.0))
            .collect::<Result<Vec<_>>>()?;
        let gt = terminal.functional_derivative_grad(&y[m], bundle.state(m), 1.0)?;
        let (prefix, suffix) = vector_kernel_sums(&g, dt, &times);

        let mut update = 0.0_f64;
        let mut y_next = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let s = times[k] - times[0];
            let mut yk = x.clone();
            yk.axpy(-s / lambda, &gt, 1.0);
            yk.axpy(-1.0 / lambda, &prefix[k], 1.0);
            yk.axpy(-s / lambda, &suffix[k], 1.0);
            update = update.max((&yk - &y[k]).norm());
            y_next.push(yk);
        }
        y = y_next;
        if update <= tol {
            converged = true;
            break;
        }
        if !update.is_finite() {
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            residual: f64::NAN,
            ratio: f64::NAN,
        });
    }

    let g: Vec<DVector<f64>> = (0..=m)
        .map(|k| running.functional_derivative_grad(&y[k], bundle.state(k), 1.0))
        .collect::<Result<Vec<_>>>()?;
    let gt = terminal.functional_derivative_grad(&y[m], bundle.state(m), 1.0)?;
    let (_, suffix) = vector_kernel_sums(&g, dt, &times);
    let z: Vec<DVector<f64>> = suffix
        .into_iter()
        .map(|mut b| {
            b.axpy(1.0, &gt, 1.0);
            b
        })
        .collect();

    Ok(ParticlePath { y, z, iterations })
}

/// Per-particle value `u(x, t)` by trapezoid quadrature along the frozen
/// trajectory.
pub fn particle_value(
    running: &dyn CostFunctional,
    terminal: &dyn CostFunctional,
    bundle: &TrajectoryBundle,
    x: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let path = particle_trajectory(running, terminal, bundle, x, tol, max_iter)?;
    let grid = bundle.grid();
    let m = grid.intervals();
    let dt = grid.dt();
    let lambda = bundle.lambda();
    let mut acc = 0.0;
    for k in 0..=m {
        let w = if k == 0 || k == m { dt / 2.0 } else { dt };
        let kinetic = path.z[k].dot(&path.z[k]) / (2.0 * lambda);
        let cost = running.functional_derivative(&path.y[k], bundle.state(k), 1.0)?;
        acc += w * (kinetic + cost);
    }
    acc += terminal.functional_derivative(&path.y[m], bundle.state(m), 1.0)?;
    Ok(acc)
}

/// Empirical monotonicity pairing of two solved problems:
/// `int (u_1(x, t) - u_2(x, t)) d(m_1 - m_2)(x)` where `m_j` is the initial
/// law of bundle `j` and `u_j` its per-particle value.
pub fn monotonicity_pairing(
    running: &dyn CostFunctional,
    terminal: &dyn CostFunctional,
    bundle1: &TrajectoryBundle,
    bundle2: &TrajectoryBundle,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    if bundle1.grid() != bundle2.grid() || bundle1.lambda() != bundle2.lambda() {
        return Err(Error::InvalidArgument(
            "monotonicity pairing needs solves on the same grid and lambda".into(),
        ));
    }
    let u_diff_mean = |law: &crate::ensemble::Ensemble| -> Result<f64> {
        let mut terms = law
            .points()
            .iter()
            .map(|x| {
                let u1 = particle_value(running, terminal, bundle1, x, tol, max_iter)?;
                let u2 = particle_value(running, terminal, bundle2, x, tol, max_iter)?;
                Ok(u1 - u2)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(stable_sum(&mut terms) / law.len() as f64)
    };
    Ok(u_diff_mean(bundle1.state(0))? - u_diff_mean(bundle2.state(0))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{Ensemble, TimeGrid};
    use crate::functionals::{QuadraticCost, QuadraticModel};
    use crate::riccati::solve_riccati;
    use crate::solver::{solve_fixed_point, SolverConfig};

    fn solve(model: &QuadraticModel, x0: &Ensemble, m: usize) -> TrajectoryBundle {
        let grid = TimeGrid::new(0.0, model.horizon(), m).unwrap();
        let cfg = SolverConfig::new(grid, model.lambda());
        solve_fixed_point(model.running(), model.terminal(), x0, &cfg).unwrap()
    }

    #[test]
    fn particle_path_reproduces_own_trajectory() {
        let model = QuadraticModel::new(
            QuadraticCost::scalar(0.7, 0.4, 0.6).unwrap(),
            QuadraticCost::scalar(0.2, 0.1, 0.3).unwrap(),
            2.0,
            0.6,
        )
        .unwrap();
        let x0 = Ensemble::from_scalars(&[0.9, -0.4, 1.3]).unwrap();
        let b = solve(&model, &x0, 64);
        for i in 0..x0.len() {
            let path = particle_trajectory(
                model.running(),
                model.terminal(),
                &b,
                x0.point(i),
                1e-12,
                10_000,
            )
            .unwrap();
            let mut worst = 0.0_f64;
            for k in 0..=64 {
                worst = worst.max((&path.y[k] - b.state(k).point(i)).norm());
            }
            assert!(worst <= 1e-7, "particle {i} deviates by {worst}");
        }
    }

    #[test]
    fn particle_value_matches_scalar_master_field() {
        let model = QuadraticModel::new(
            QuadraticCost::scalar(0.5, 0.6, 0.8).unwrap(),
            QuadraticCost::scalar(0.3, 0.2, -0.4).unwrap(),
            2.5,
            0.7,
        )
        .unwrap();
        let x0 = Ensemble::from_scalars(&[0.8, -0.5, 0.2, 1.1]).unwrap();
        let b = solve(&model, &x0, 400);
        let grid = TimeGrid::new(0.0, model.horizon(), 400).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        let xbar = x0.mean();
        for probe in [-0.9_f64, 0.0, 0.55, 1.7] {
            let x = nalgebra::DVector::from_vec(vec![probe]);
            let u = particle_value(model.running(), model.terminal(), &b, &x, 1e-12, 10_000)
                .unwrap();
            let closed = tables.master_scalar_field(0, &x, &xbar);
            assert!(
                (u - closed).abs() <= 1e-5,
                "probe {probe}: quadrature {u} vs closed form {closed}"
            );
        }
    }

    #[test]
    fn pairing_vanishes_for_identical_laws() {
        let model = QuadraticModel::new(
            QuadraticCost::scalar(0.4, 0.5, 0.0).unwrap(),
            QuadraticCost::scalar(0.2, 0.0, 0.0).unwrap(),
            2.0,
            0.5,
        )
        .unwrap();
        let x0 = Ensemble::from_scalars(&[0.3, -0.7, 1.0]).unwrap();
        let b1 = solve(&model, &x0, 32);
        let b2 = solve(&model, &x0, 32);
        let p = monotonicity_pairing(model.running(), model.terminal(), &b1, &b2, 1e-11, 10_000)
            .unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn pairing_nonnegative_and_grows_with_translation() {
        // S = 0 keeps the measure dependence monotone; translated copies of
        // a law pair nonnegatively and farther shifts pair harder.
        let model = QuadraticModel::new(
            QuadraticCost::scalar(0.6, 0.8, 0.0).unwrap(),
            QuadraticCost::scalar(0.3, 0.4, 0.0).unwrap(),
            2.2,
            0.6,
        )
        .unwrap();
        let base = Ensemble::from_scalars(&[0.2, -0.5, 0.9, -0.1]).unwrap();
        let b0 = solve(&model, &base, 48);
        let mut prev = 0.0;
        for shift in [0.4_f64, 0.8, 1.6] {
            let moved =
                Ensemble::from_scalars(&[0.2 + shift, -0.5 + shift, 0.9 + shift, -0.1 + shift])
                    .unwrap();
            let b1 = solve(&model, &moved, 48);
            let p =
                monotonicity_pairing(model.running(), model.terminal(), &b1, &b0, 1e-11, 10_000)
                    .unwrap();
            assert!(p >= -1e-10, "pairing {p} for shift {shift}");
            assert!(p >= prev - 1e-10, "pairing should grow with the shift");
            prev = p;
        }
    }
}
