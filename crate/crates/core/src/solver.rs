//! Contraction fixed-point solver for the state/adjoint boundary value
//! problem.
//!
//! The optimal trajectory solves
//!
//! ```text
//! dY/ds = -Z(s)/lambda        Y(t) = X
//! -dZ/ds = D_X F(Y(s))        Z(T) = D_X F_T(Y(T))
//! ```
//!
//! which folds into the integral equation
//!
//! ```text
//! Y(s) = X - (s - t)/lambda D_X F_T(Y(T))
//!          - 1/lambda int_t^T D_X F(Y(sig)) (min(s, sig) - t) dsig
//! ```
//!
//! iterated as `Y <- K(Y)` from the zero-control path `Y(s) = X`. The map
//! is a contraction with factor at most `c tau (1 + tau) / lambda` on the
//! remaining horizon `tau = T - t`, so the iteration is refused when
//! `lambda <= c tau (1 + tau)` unless forced. Time integrals use the
//! composite trapezoid rule: the kernel `min(s, sig) - t` is piecewise
//! linear with its kink on a grid node, so the rule keeps second order and
//! is exact for the quadratic-in-time parts.

use crate::ensemble::{Ensemble, TimeGrid};
use crate::error::{Error, Result};
use crate::functionals::{pair_lipschitz, CostFunctional};

/// Outcome of the admissibility gate `lambda > c tau (1 + tau)`.
#[derive(Debug, Clone, Copy)]
pub struct Admissibility {
    pub c: f64,
    pub lambda: f64,
    /// Margin with the remaining horizon `tau = T - t`.
    pub margin: f64,
    /// Margin with the full horizon `T` (conservative variant; the two
    /// coincide at `t = 0`).
    pub margin_full: f64,
    pub admissible: bool,
    /// Contraction factor bound `c tau (1 + tau) / lambda`.
    pub contraction_bound: f64,
}

/// Checks `lambda > c tau (1 + tau)` for `tau = horizon - t`.
pub fn admissibility_check(c: f64, lambda: f64, t: f64, horizon: f64) -> Result<Admissibility> {
    if horizon.partial_cmp(&t) != Some(std::cmp::Ordering::Greater) || t < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "need horizon > t >= 0, got t = {t}, horizon = {horizon}"
        )));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    if c < 0.0 {
        return Err(Error::InvalidArgument("c must be nonnegative".into()));
    }
    let tau = horizon - t;
    let margin = lambda - c * tau * (1.0 + tau);
    let margin_full = lambda - c * horizon * (1.0 + horizon);
    Ok(Admissibility {
        c,
        lambda,
        margin,
        margin_full,
        admissible: margin > 0.0,
        contraction_bound: c * tau * (1.0 + tau) / lambda,
    })
}

/// Admissibility for a (running, terminal) pair using the shared certified
/// Lipschitz bound.
pub fn admissibility_for(
    running: &dyn CostFunctional,
    terminal: &dyn CostFunctional,
    lambda: f64,
    t: f64,
    horizon: f64,
) -> Result<Admissibility> {
    admissibility_check(pair_lipschitz(running, terminal), lambda, t, horizon)
}

/// Solver parameters. The grid spans `[t, T]`.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub grid: TimeGrid,
    pub lambda: f64,
    /// Sup-node Hilbert-norm tolerance on the fixed-point update.
    pub tol: f64,
    pub max_iter: usize,
    /// Run even when the admissibility margin is nonpositive. A forced run
    /// that fails to converge still returns its bundle (with
    /// `converged = false` and the achieved residual) instead of erroring.
    pub force_inadmissible: bool,
}

impl SolverConfig {
    pub fn new(grid: TimeGrid, lambda: f64) -> Self {
        Self {
            grid,
            lambda,
            tol: 1e-10,
            max_iter: 10_000,
            force_inadmissible: false,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn forced(mut self) -> Self {
        self.force_inadmissible = true;
        self
    }
}

/// Discretized optimal state, adjoint and control paths, one ensemble per
/// grid node.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    grid: TimeGrid,
    lambda: f64,
    y: Vec<Ensemble>,
    z: Vec<Ensemble>,
    u: Vec<Ensemble>,
    iterations: usize,
    final_residual: f64,
    /// Largest observed successive-update ratio after the first iterate.
    contraction_ratio: f64,
    /// Theoretical bound `c tau (1 + tau) / lambda` for this run.
    contraction_bound: f64,
    converged: bool,
}

impl TrajectoryBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn state(&self, node: usize) -> &Ensemble {
        &self.y[node]
    }

    pub fn adjoint(&self, node: usize) -> &Ensemble {
        &self.z[node]
    }

    pub fn control(&self, node: usize) -> &Ensemble {
        &self.u[node]
    }

    pub fn states(&self) -> &[Ensemble] {
        &self.y
    }

    pub fn adjoints(&self) -> &[Ensemble] {
        &self.z
    }

    pub fn controls(&self) -> &[Ensemble] {
        &self.u
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn final_residual(&self) -> f64 {
        self.final_residual
    }

    pub fn contraction_ratio(&self) -> f64 {
        self.contraction_ratio
    }

    pub fn contraction_bound(&self) -> f64 {
        self.contraction_bound
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    fn require_converged(&self) -> Result<()> {
        if !self.converged {
            return Err(Error::InvalidArgument(
                "trajectory bundle did not converge".into(),
            ));
        }
        Ok(())
    }

    /// `V(X, t) = 1/(2 lambda) int ||Z||^2 + int F(Y) + F_T(Y(T))` by the
    /// trapezoid rule on the grid.
    pub fn value_function(
        &self,
        running: &dyn CostFunctional,
        terminal: &dyn CostFunctional,
    ) -> Result<f64> {
        self.require_converged()?;
        let m = self.grid.intervals();
        let dt = self.grid.dt();
        let mut acc = 0.0;
        for k in 0..=m {
            let w = if k == 0 || k == m { dt / 2.0 } else { dt };
            let z = &self.z[k];
            let kinetic = z.inner_product(z)? / (2.0 * self.lambda);
            acc += w * (kinetic + running.eval(&self.y[k])?);
        }
        Ok(acc + terminal.eval(&self.y[m])?)
    }

    /// `D_X V(X, t) = Z(t)`.
    pub fn gradient_value(&self) -> Result<&Ensemble> {
        self.require_converged()?;
        Ok(&self.z[0])
    }

    /// `dV/dt (X, t) = lambda/2 ||u(t)||^2 - F(X)`.
    pub fn time_derivative_value(&self, running: &dyn CostFunctional) -> Result<f64> {
        self.require_converged()?;
        let u0 = &self.u[0];
        Ok(0.5 * self.lambda * u0.inner_product(u0)? - running.eval(&self.y[0])?)
    }

    /// CSV rows
    /// `(node_index, time, particle_index, y_0.., z_0.., u_0..)`.
    pub fn to_csv(&self) -> String {
        let n = self.y[0].dim();
        let mut header = String::from("node_index,time,particle_index");
        for (prefix, _) in [("y", 0), ("z", 0), ("u", 0)] {
            for j in 0..n {
                header.push_str(&format!(",{prefix}_{j}"));
            }
        }
        let mut out = header;
        out.push('\n');
        for k in 0..self.grid.n_nodes() {
            let t = self.grid.node(k);
            for i in 0..self.y[k].len() {
                out.push_str(&format!("{k},{t},{i}"));
                for ens in [&self.y[k], &self.z[k], &self.u[k]] {
                    let p = ens.point(i);
                    for j in 0..n {
                        out.push_str(&format!(",{}", p[j]));
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Weighted trapezoid prefix `int_t^{s_k} g(sig) (sig - t) dsig` and suffix
/// `int_{s_k}^T g(sig) dsig` for a per-node ensemble sequence.
fn kernel_sums(g: &[Ensemble], grid: &TimeGrid) -> (Vec<Ensemble>, Vec<Ensemble>) {
    let m = grid.intervals();
    let dt = grid.dt();
    let t0 = grid.t0();
    let zero = g[0].scale(0.0);

    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(zero.clone());
    for k in 0..m {
        let mut next = prefix[k].clone();
        next.axpy(dt / 2.0 * (grid.node(k) - t0), &g[k]);
        next.axpy(dt / 2.0 * (grid.node(k + 1) - t0), &g[k + 1]);
        prefix.push(next);
    }

    let mut suffix = vec![zero; m + 1];
    for k in (0..m).rev() {
        let mut cur = suffix[k + 1].clone();
        cur.axpy(dt / 2.0, &g[k]);
        cur.axpy(dt / 2.0, &g[k + 1]);
        suffix[k] = cur;
    }
    (prefix, suffix)
}

/// Solves the boundary value problem by iterating the integral map from the
/// zero-control path.
pub fn solve_fixed_point(
    running: &dyn CostFunctional,
    terminal: &dyn CostFunctional,
    x0: &Ensemble,
    cfg: &SolverConfig,
) -> Result<TrajectoryBundle> {
    if x0.dim() != running.dim() || x0.dim() != terminal.dim() {
        return Err(Error::shape(format!(
            "ensemble dimension {} does not match functionals ({}, {})",
            x0.dim(),
            running.dim(),
            terminal.dim()
        )));
    }
    if cfg.tol.is_nan() || cfg.tol <= 0.0 {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if cfg.max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let adm = admissibility_for(running, terminal, cfg.lambda, cfg.grid.t0(), cfg.grid.horizon())?;
    if !adm.admissible && !cfg.force_inadmissible {
        return Err(Error::Inadmissible {
            margin: adm.margin,
            margin_full: adm.margin_full,
        });
    }

    let grid = &cfg.grid;
    let m = grid.intervals();
    let t0 = grid.t0();
    let lambda = cfg.lambda;

    let mut y: Vec<Ensemble> = vec![x0.clone(); m + 1];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut prev_residual = f64::NAN;
    let mut worst_ratio = 0.0_f64;
    let mut converged = false;

    while iterations < cfg.max_iter {
        iterations += 1;
        let g: Vec<Ensemble> = y
            .iter()
            .map(|yk| running.grad(yk))
            .collect::<Result<Vec<_>>>()?;
        let gt = terminal.grad(&y[m])?;
        let (prefix, suffix) = kernel_sums(&g, grid);

        let mut update = 0.0_f64;
        let mut y_next = Vec::with_capacity(m + 1);
        for k in 0..=m {
            let s = grid.node(k) - t0;
            let mut yk = x0.clone();
            yk.axpy(-s / lambda, &gt);
            yk.axpy(-1.0 / lambda, &prefix[k]);
            yk.axpy(-s / lambda, &suffix[k]);
            update = update.max(yk.distance(&y[k])?);
            y_next.push(yk);
        }
        y = y_next;

        if iterations >= 2 && prev_residual > 0.0 {
            worst_ratio = worst_ratio.max(update / prev_residual);
        }
        prev_residual = update;
        residual = update;

        if residual <= cfg.tol {
            converged = true;
            break;
        }
        if !residual.is_finite() {
            break;
        }
    }

    if !converged && !cfg.force_inadmissible {
        return Err(Error::NonConvergence {
            iterations,
            residual,
            ratio: worst_ratio,
        });
    }

    // adjoint and control from the final state path
    let g: Vec<Ensemble> = y
        .iter()
        .map(|yk| running.grad(yk))
        .collect::<Result<Vec<_>>>()?;
    let gt = terminal.grad(&y[m])?;
    let (_, suffix) = kernel_sums(&g, grid);
    let z: Vec<Ensemble> = suffix
        .into_iter()
        .map(|mut b| {
            b.axpy(1.0, &gt);
            b
        })
        .collect();
    let u: Vec<Ensemble> = z.iter().map(|zk| zk.scale(-1.0 / lambda)).collect();

    Ok(TrajectoryBundle {
        grid: grid.clone(),
        lambda,
        y,
        z,
        u,
        iterations,
        final_residual: residual,
        contraction_ratio: worst_ratio,
        contraction_bound: adm.contraction_bound,
        converged,
    })
}
