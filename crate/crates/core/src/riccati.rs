//! Closed-form oracle for the fully quadratic problem.
//!
//! With quadratic running cost `f(x,m) = 1/2 (x - S xbar)^T Qbar (x - S xbar)
//! + 1/2 x^T Q x` (and the terminal analog), the value function is
//!
//! ```text
//! V(m, t) = 1/2 int x^T P(t) x m(dx) + 1/2 xbar^T Sigma(t; m1) xbar
//! ```
//!
//! where `xbar = int x m(dx)` is the unnormalized first moment and `m1` the
//! total mass. The coefficients solve matrix ODEs backward from the horizon:
//!
//! ```text
//! dP/dt     = P^2/lambda - (Q + Qbar)                    P(T) = Q_T + Qbar_T
//! dSigma/dt = (Sigma P + P Sigma + m1 Sigma^2)/lambda
//!             - (S^T Qbar S m1 - Qbar S - S^T Qbar)      Sigma(T) = terminal analog
//! ```
//!
//! `Gamma = dSigma/dm1` and `dGamma/dm1` obey linear ODEs obtained by
//! differentiating the Sigma equation in `m1`; they feed the scalar master
//! field and the linearized responses. Everything is integrated jointly
//! with classical fourth-order steps on a half-step grid so that forward
//! flows (mean flow, propagator) can consume midpoint values.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{stable_sum, Ensemble, TimeGrid};
use crate::error::{Error, Result};
use crate::functionals::{CostFunctional, QuadraticModel};
use crate::linalg::{max_abs_entry, sym_expm, symmetrize};

const BLOWUP_GUARD: f64 = 1e12;

#[derive(Debug, Clone)]
struct Coefficients {
    p: DMatrix<f64>,
    sigma: DMatrix<f64>,
    gamma: DMatrix<f64>,
    gamma_m1: DMatrix<f64>,
}

impl Coefficients {
    fn axpy(&self, alpha: f64, other: &Coefficients) -> Coefficients {
        Coefficients {
            p: &self.p + &other.p * alpha,
            sigma: &self.sigma + &other.sigma * alpha,
            gamma: &self.gamma + &other.gamma * alpha,
            gamma_m1: &self.gamma_m1 + &other.gamma_m1 * alpha,
        }
    }

    fn symmetrized(&self) -> Coefficients {
        Coefficients {
            p: symmetrize(&self.p),
            sigma: symmetrize(&self.sigma),
            gamma: symmetrize(&self.gamma),
            gamma_m1: symmetrize(&self.gamma_m1),
        }
    }

    fn max_norm(&self) -> f64 {
        max_abs_entry(&self.p)
            .max(max_abs_entry(&self.sigma))
            .max(max_abs_entry(&self.gamma))
            .max(max_abs_entry(&self.gamma_m1))
    }
}

struct Ode {
    lambda: f64,
    m1: f64,
    state_coeff: DMatrix<f64>,    // Q + Qbar
    mean_quad: DMatrix<f64>,      // S^T Qbar S
    mean_coupling: DMatrix<f64>,  // S^T Qbar S m1 - Qbar S - S^T Qbar
}

impl Ode {
    fn rhs(&self, c: &Coefficients) -> Coefficients {
        let il = 1.0 / self.lambda;
        let p_dot = &c.p * &c.p * il - &self.state_coeff;
        let sigma_dot = (&c.sigma * &c.p + &c.p * &c.sigma + &c.sigma * &c.sigma * self.m1) * il
            - &self.mean_coupling;
        let e = &c.p + &c.sigma * self.m1;
        let gamma_dot =
            (&c.gamma * &e + &e * &c.gamma + &c.sigma * &c.sigma) * il - &self.mean_quad;
        let f = &c.sigma + &c.gamma * self.m1;
        let gamma_m1_dot = (&c.gamma_m1 * &e
            + &e * &c.gamma_m1
            + &c.gamma * &f
            + &f * &c.gamma
            + &c.sigma * &c.gamma
            + &c.gamma * &c.sigma)
            * il;
        Coefficients {
            p: p_dot,
            sigma: sigma_dot,
            gamma: gamma_dot,
            gamma_m1: gamma_m1_dot,
        }
    }
}

/// Tabulated Riccati coefficients on a time grid (plus interval midpoints).
#[derive(Debug, Clone)]
pub struct RiccatiTables {
    model: QuadraticModel,
    grid: TimeGrid,
    m1: f64,
    /// `2 m + 1` entries: fine index `2k` is node `k`, `2k + 1` the midpoint
    /// of interval `k`.
    fine: Vec<Coefficients>,
}

/// Integrates the coefficient ODEs backward from the horizon.
///
/// The three auxiliary equations are linear given `P`; integrating the
/// whole system jointly reproduces the standalone `P` integration exactly
/// (its stages never read the others) while keeping the stage values
/// consistent.
pub fn solve_riccati(model: &QuadraticModel, grid: &TimeGrid, m1: f64) -> Result<RiccatiTables> {
    if (grid.horizon() - model.horizon()).abs() > 1e-12 * model.horizon().abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "grid horizon {} does not match model horizon {}",
            grid.horizon(),
            model.horizon()
        )));
    }
    if m1.is_nan() || m1 <= 0.0 {
        return Err(Error::InvalidArgument("m1 must be positive".into()));
    }
    let n = model.dim();
    let ode = Ode {
        lambda: model.lambda(),
        m1,
        state_coeff: model.running().state_coeff(),
        mean_quad: model.running().mean_quad(),
        mean_coupling: model.running().mean_coupling(m1),
    };

    let terminal = Coefficients {
        p: model.terminal().state_coeff(),
        sigma: model.terminal().mean_coupling(m1),
        gamma: model.terminal().mean_quad(),
        gamma_m1: DMatrix::zeros(n, n),
    };

    let n_fine = 2 * grid.intervals() + 1;
    let h = grid.dt() / 2.0;
    let mut fine = vec![terminal; n_fine];
    for f in (0..n_fine - 1).rev() {
        let cur = fine[f + 1].clone();
        // one RK4 step of size -h (backward in time)
        let k1 = ode.rhs(&cur);
        let k2 = ode.rhs(&cur.axpy(-0.5 * h, &k1));
        let k3 = ode.rhs(&cur.axpy(-0.5 * h, &k2));
        let k4 = ode.rhs(&cur.axpy(-h, &k3));
        let mut next = cur.axpy(-h / 6.0, &k1);
        next = next.axpy(-h / 3.0, &k2);
        next = next.axpy(-h / 3.0, &k3);
        next = next.axpy(-h / 6.0, &k4);
        let next = next.symmetrized();
        let norm = next.max_norm();
        if !norm.is_finite() || norm > BLOWUP_GUARD {
            return Err(Error::Blowup {
                t: grid.t0() + f as f64 * h,
                norm,
            });
        }
        fine[f] = next;
    }

    Ok(RiccatiTables {
        model: model.clone(),
        grid: grid.clone(),
        m1,
        fine,
    })
}

impl RiccatiTables {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn m1(&self) -> f64 {
        self.m1
    }

    pub fn model(&self) -> &QuadraticModel {
        &self.model
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.grid.n_nodes() {
            return Err(Error::IndexOutOfRange {
                index: node,
                len: self.grid.n_nodes(),
            });
        }
        Ok(())
    }

    pub fn p(&self, node: usize) -> &DMatrix<f64> {
        &self.fine[2 * node].p
    }

    pub fn sigma(&self, node: usize) -> &DMatrix<f64> {
        &self.fine[2 * node].sigma
    }

    /// `Gamma(t; m1) = dSigma/dm1`.
    pub fn gamma(&self, node: usize) -> &DMatrix<f64> {
        &self.fine[2 * node].gamma
    }

    /// `dGamma/dm1 = d^2 Sigma/dm1^2`.
    pub fn gamma_m1(&self, node: usize) -> &DMatrix<f64> {
        &self.fine[2 * node].gamma_m1
    }

    fn fine_at(&self, f: usize) -> &Coefficients {
        &self.fine[f]
    }

    /// Time derivatives `(dP/dt, dSigma/dt, dGamma/dt)` at a node, from the
    /// ODE right-hand sides.
    pub fn time_derivatives(&self, node: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let ode = self.ode();
        let d = ode.rhs(self.fine_at(2 * node));
        (d.p, d.sigma, d.gamma)
    }

    fn ode(&self) -> Ode {
        Ode {
            lambda: self.model.lambda(),
            m1: self.m1,
            state_coeff: self.model.running().state_coeff(),
            mean_quad: self.model.running().mean_quad(),
            mean_coupling: self.model.running().mean_coupling(self.m1),
        }
    }

    /// Closed-form value `V(X, t) = 1/2 E X^T P X + 1/2 (EX)^T Sigma EX`
    /// at grid node `t_index`. Requires tables computed at unit mass.
    pub fn value_closed_form(&self, x: &Ensemble, t_index: usize) -> Result<f64> {
        self.check_node(t_index)?;
        if (self.m1 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(
                "closed-form value requires tables at m1 = 1".into(),
            ));
        }
        if x.dim() != self.model.dim() {
            return Err(Error::shape("ensemble dimension does not match model"));
        }
        let p = self.p(t_index);
        let mut quads: Vec<f64> = x
            .points()
            .iter()
            .map(|pt| (pt.transpose() * p * pt)[(0, 0)])
            .collect();
        let xbar = x.mean();
        let mean_term = (xbar.transpose() * self.sigma(t_index) * &xbar)[(0, 0)];
        Ok(0.5 * stable_sum(&mut quads) / x.len() as f64 + 0.5 * mean_term)
    }

    /// Scalar master field
    /// `U(x, m, t) = 1/2 x^T P x + xbar^T Sigma x + 1/2 xbar^T Gamma xbar`
    /// with `xbar` the unnormalized first moment of `m`.
    pub fn master_scalar_field(&self, t_index: usize, x: &DVector<f64>, xbar: &DVector<f64>) -> f64 {
        let c = self.fine_at(2 * t_index);
        0.5 * (x.transpose() * &c.p * x)[(0, 0)]
            + (xbar.transpose() * &c.sigma * x)[(0, 0)]
            + 0.5 * (xbar.transpose() * &c.gamma * xbar)[(0, 0)]
    }

    /// Vector master field `U(x, m, t) = P x + Sigma xbar`.
    pub fn master_vector_field(
        &self,
        t_index: usize,
        x: &DVector<f64>,
        xbar: &DVector<f64>,
    ) -> DVector<f64> {
        let c = self.fine_at(2 * t_index);
        &c.p * x + &c.sigma * xbar
    }

    /// Integrates `dxbar/ds = -(P + m1 Sigma) xbar / lambda` forward from
    /// the first node; returns the per-node path.
    pub fn mean_flow(&self, xbar0: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        if xbar0.len() != self.model.dim() {
            return Err(Error::shape("mean dimension does not match model"));
        }
        let drift = |c: &Coefficients, v: &DVector<f64>| -> DVector<f64> {
            -((&c.p + &c.sigma * self.m1) * v) / self.model.lambda()
        };
        let h = self.grid.dt();
        let mut path = Vec::with_capacity(self.grid.n_nodes());
        let mut cur = xbar0.clone();
        path.push(cur.clone());
        for k in 0..self.grid.intervals() {
            let (c0, cm, c1) = (
                self.fine_at(2 * k),
                self.fine_at(2 * k + 1),
                self.fine_at(2 * k + 2),
            );
            let k1 = drift(c0, &cur);
            let k2 = drift(cm, &(&cur + &k1 * (h / 2.0)));
            let k3 = drift(cm, &(&cur + &k2 * (h / 2.0)));
            let k4 = drift(c1, &(&cur + &k3 * h));
            cur += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            path.push(cur.clone());
        }
        Ok(path)
    }

    /// Closed-form state path from node `start`: per particle,
    ///
    /// ```text
    /// y_i(s) = Phi_P(s, t) (x_i - mu) + Phi_{P + m1 Sigma}(s, t) mu
    /// ```
    ///
    /// with `mu` the particle mean at the start node and `Phi_A` the
    /// time-ordered product of per-step exponentials of the step-midpoint
    /// matrix (the matrices need not commute across times).
    pub fn propagator(&self, x: &Ensemble, start: usize) -> Result<Vec<Ensemble>> {
        self.check_node(start)?;
        if x.dim() != self.model.dim() {
            return Err(Error::shape("ensemble dimension does not match model"));
        }
        let n = self.model.dim();
        let lambda = self.model.lambda();
        let h = self.grid.dt();
        let mu = x.mean();
        let deviations: Vec<DVector<f64>> = x.points().iter().map(|p| p - &mu).collect();

        let mut phi_dev = DMatrix::<f64>::identity(n, n);
        let mut phi_mean = DMatrix::<f64>::identity(n, n);
        let mut path = Vec::with_capacity(self.grid.n_nodes() - start);
        path.push(x.clone());
        for k in start..self.grid.intervals() {
            let mid = self.fine_at(2 * k + 1);
            phi_dev = sym_expm(&mid.p, -h / lambda) * phi_dev;
            phi_mean = sym_expm(&(&mid.p + &mid.sigma * self.m1), -h / lambda) * phi_mean;
            let mean_part = &phi_mean * &mu;
            let points: Vec<DVector<f64>> = deviations
                .iter()
                .map(|d| &phi_dev * d + &mean_part)
                .collect();
            path.push(Ensemble::new(points)?);
        }
        Ok(path)
    }

    /// Residual of the measure-space Bellman equation at a node, with the
    /// measure `m = m1 * empirical(ens)`. Time derivatives come from the
    /// ODE right-hand sides; the integrals are empirical sums.
    pub fn bellman_residual(&self, t_index: usize, ens: &Ensemble) -> Result<f64> {
        self.check_node(t_index)?;
        let c = self.fine_at(2 * t_index);
        let (p_dot, sigma_dot, _) = self.time_derivatives(t_index);
        let lambda = self.model.lambda();
        let xbar = ens.mean() * self.m1;

        let mut quad_dot: Vec<f64> = ens
            .points()
            .iter()
            .map(|x| (x.transpose() * &p_dot * x)[(0, 0)])
            .collect();
        let dv_dt = 0.5 * self.m1 * stable_sum(&mut quad_dot) / ens.len() as f64
            + 0.5 * (xbar.transpose() * &sigma_dot * &xbar)[(0, 0)];

        let mut grad_sq: Vec<f64> = ens
            .points()
            .iter()
            .map(|x| {
                let g = &c.p * x + &c.sigma * &xbar;
                g.dot(&g)
            })
            .collect();
        let kinetic = self.m1 * stable_sum(&mut grad_sq) / ens.len() as f64;

        let running = self.model.running();
        let mut quads: Vec<f64> = ens
            .points()
            .iter()
            .map(|x| (x.transpose() * running.state_coeff() * x)[(0, 0)])
            .collect();
        let cost = 0.5 * self.m1 * stable_sum(&mut quads) / ens.len() as f64
            + 0.5 * (xbar.transpose() * running.mean_coupling(self.m1) * &xbar)[(0, 0)];

        Ok(dv_dt - kinetic / (2.0 * lambda) + cost)
    }

    /// Residual of the scalar master equation at `(x, m, t)` with
    /// `m = m1 * empirical(ens)`.
    pub fn scalar_master_residual(
        &self,
        t_index: usize,
        x: &DVector<f64>,
        ens: &Ensemble,
    ) -> Result<f64> {
        self.check_node(t_index)?;
        let c = self.fine_at(2 * t_index);
        let (p_dot, sigma_dot, gamma_dot) = self.time_derivatives(t_index);
        let lambda = self.model.lambda();
        let xbar = ens.mean() * self.m1;

        let du_dt = 0.5 * (x.transpose() * &p_dot * x)[(0, 0)]
            + (xbar.transpose() * &sigma_dot * x)[(0, 0)]
            + 0.5 * (xbar.transpose() * &gamma_dot * &xbar)[(0, 0)];

        // int D_xi dU/dm (x)(xi) . D_xi U(xi) m(dxi); the first factor
        // Gamma xbar + Sigma x does not depend on xi.
        let lhs_vec = &c.gamma * &xbar + &c.sigma * x;
        let mut dots: Vec<f64> = ens
            .points()
            .iter()
            .map(|xi| lhs_vec.dot(&(&c.p * xi + &c.sigma * &xbar)))
            .collect();
        let coupling_term = self.m1 * stable_sum(&mut dots) / ens.len() as f64;

        let grad = &c.p * x + &c.sigma * &xbar;
        let cost = self
            .model
            .running()
            .functional_derivative(x, ens, self.m1)?;

        Ok(du_dt - coupling_term / lambda - grad.dot(&grad) / (2.0 * lambda) + cost)
    }

    /// Residual of the vector master equation at `(x, m, t)`; returns the
    /// euclidean norm of the defect.
    pub fn vector_master_residual(
        &self,
        t_index: usize,
        x: &DVector<f64>,
        ens: &Ensemble,
    ) -> Result<f64> {
        self.check_node(t_index)?;
        let c = self.fine_at(2 * t_index);
        let (p_dot, sigma_dot, _) = self.time_derivatives(t_index);
        let lambda = self.model.lambda();
        let n = self.model.dim();
        let xbar = ens.mean() * self.m1;

        let du_dt = &p_dot * x + &sigma_dot * &xbar;

        // D_xi dU/dm (x)(xi) = Sigma for every xi, so the integral applies
        // Sigma to int U(xi, m, t) m(dxi).
        let field_mean = DVector::from_fn(n, |j, _| {
            let mut col: Vec<f64> = ens
                .points()
                .iter()
                .map(|xi| (&c.p * xi + &c.sigma * &xbar)[j])
                .collect();
            self.m1 * stable_sum(&mut col) / ens.len() as f64
        });
        let coupling_term = &c.sigma * field_mean;

        let transport = &c.p * (&c.p * x + &c.sigma * &xbar);
        let cost_grad = self
            .model
            .running()
            .functional_derivative_grad(x, ens, self.m1)?;

        let defect = du_dt - coupling_term / lambda - transport / lambda + cost_grad;
        Ok(defect.norm())
    }

    /// Linearized response of the mean flow and of the per-particle value
    /// to a mass perturbation of size `m1_tilde` with first-moment
    /// perturbation `xbar_tilde0`. Integrates the base mean `xbar` jointly
    /// with its perturbation and evaluates the affine-in-`x` coefficients
    /// of the linearized value `u~(x, s) = x . a(s) + b(s)`.
    pub fn linearized_fields(
        &self,
        xbar0: &DVector<f64>,
        m1_tilde: f64,
        xbar_tilde0: &DVector<f64>,
    ) -> Result<LinearizedFields> {
        if xbar0.len() != self.model.dim() || xbar_tilde0.len() != self.model.dim() {
            return Err(Error::shape("mean dimension does not match model"));
        }
        let lambda = self.model.lambda();
        let il = 1.0 / lambda;
        let drift = |c: &Coefficients, v: &DVector<f64>, vt: &DVector<f64>| {
            let e = &c.p + &c.sigma * self.m1;
            let dv = -(&e * v) * il;
            let dvt = -(&e * vt) * il - (&c.sigma + &c.gamma * self.m1) * v * (m1_tilde * il);
            (dv, dvt)
        };

        let h = self.grid.dt();
        let n_nodes = self.grid.n_nodes();
        let mut xbar = Vec::with_capacity(n_nodes);
        let mut xbar_tilde = Vec::with_capacity(n_nodes);
        let mut cur = xbar0.clone();
        let mut cur_t = xbar_tilde0.clone();
        xbar.push(cur.clone());
        xbar_tilde.push(cur_t.clone());
        for k in 0..self.grid.intervals() {
            let (c0, cm, c1) = (
                self.fine_at(2 * k),
                self.fine_at(2 * k + 1),
                self.fine_at(2 * k + 2),
            );
            let (k1, k1t) = drift(c0, &cur, &cur_t);
            let (k2, k2t) = drift(cm, &(&cur + &k1 * (h / 2.0)), &(&cur_t + &k1t * (h / 2.0)));
            let (k3, k3t) = drift(cm, &(&cur + &k2 * (h / 2.0)), &(&cur_t + &k2t * (h / 2.0)));
            let (k4, k4t) = drift(c1, &(&cur + &k3 * h), &(&cur_t + &k3t * h));
            cur += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            cur_t += (k1t + k2t * 2.0 + k3t * 2.0 + k4t) * (h / 6.0);
            xbar.push(cur.clone());
            xbar_tilde.push(cur_t.clone());
        }

        // u~(x, s) = x . a + b with
        //   a = Sigma xbar~ + m1~ Gamma xbar
        //   b = xbar^T Gamma xbar~ + (m1~/2) xbar^T (dGamma/dm1) xbar
        let mut coeff_linear = Vec::with_capacity(n_nodes);
        let mut coeff_const = Vec::with_capacity(n_nodes);
        for k in 0..n_nodes {
            let c = self.fine_at(2 * k);
            let a = &c.sigma * &xbar_tilde[k] + &c.gamma * &xbar[k] * m1_tilde;
            let b = (xbar[k].transpose() * &c.gamma * &xbar_tilde[k])[(0, 0)]
                + 0.5 * m1_tilde * (xbar[k].transpose() * &c.gamma_m1 * &xbar[k])[(0, 0)];
            coeff_linear.push(a);
            coeff_const.push(b);
        }

        let fields = LinearizedFields {
            xbar,
            xbar_tilde,
            coeff_linear,
            coeff_const,
            max_residual: 0.0,
        };
        let max_residual = self.linearized_residual(&fields, m1_tilde)?;
        Ok(LinearizedFields {
            max_residual,
            ..fields
        })
    }

    /// Defect of the linearized transport equation across all nodes,
    /// matched coefficient-by-coefficient in `x` (time derivatives from the
    /// ODE right-hand sides).
    fn linearized_residual(&self, fields: &LinearizedFields, m1_tilde: f64) -> Result<f64> {
        let lambda = self.model.lambda();
        let il = 1.0 / lambda;
        let running = self.model.running();
        let b_mat = running.mean_quad();
        let coupling = running.mean_coupling(self.m1);
        let mut worst = 0.0_f64;
        for k in 0..self.grid.n_nodes() {
            let c = self.fine_at(2 * k);
            let ode = self.ode();
            let d = ode.rhs(c);
            let xb = &fields.xbar[k];
            let xbt = &fields.xbar_tilde[k];
            let e = &c.p + &c.sigma * self.m1;
            let xb_dot = -(&e * xb) * il;
            let xbt_dot = -(&e * xbt) * il - (&c.sigma + &c.gamma * self.m1) * xb * (m1_tilde * il);

            let a = &fields.coeff_linear[k];
            let a_dot = &d.sigma * xbt
                + &c.sigma * &xbt_dot
                + (&d.gamma * xb + &c.gamma * &xb_dot) * m1_tilde;
            let b_dot = (xb_dot.transpose() * &c.gamma * xbt)[(0, 0)]
                + (xb.transpose() * &d.gamma * xbt)[(0, 0)]
                + (xb.transpose() * &c.gamma * &xbt_dot)[(0, 0)]
                + m1_tilde
                    * ((xb.transpose() * &c.gamma_m1 * &xb_dot)[(0, 0)]
                        + 0.5 * (xb.transpose() * &d.gamma_m1 * xb)[(0, 0)]);

            // linear-in-x coefficient of the defect
            let lin = -&a_dot + &c.p * a * il - (&b_mat * xb * m1_tilde + &coupling * xbt);
            // constant coefficient of the defect
            let cst = -b_dot + a.dot(&(&c.sigma * xb)) * il - (xb.transpose() * &b_mat * xbt)[(0, 0)];
            worst = worst.max(lin.norm()).max(cst.abs());
        }
        Ok(worst)
    }

    /// CSV rows `(node_index, time, matrix_name, row, col, value)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_index,time,matrix_name,row,col,value\n");
        let n = self.model.dim();
        for k in 0..self.grid.n_nodes() {
            let t = self.grid.node(k);
            for (name, m) in [
                ("P", self.p(k)),
                ("Sigma", self.sigma(k)),
                ("Gamma", self.gamma(k)),
                ("GammaM1", self.gamma_m1(k)),
            ] {
                for r in 0..n {
                    for c in 0..n {
                        out.push_str(&format!("{k},{t},{name},{r},{c},{}\n", m[(r, c)]));
                    }
                }
            }
        }
        out
    }
}

/// Mean path, its linear response, and the affine coefficients of the
/// linearized per-particle value.
#[derive(Debug, Clone)]
pub struct LinearizedFields {
    pub xbar: Vec<DVector<f64>>,
    pub xbar_tilde: Vec<DVector<f64>>,
    pub coeff_linear: Vec<DVector<f64>>,
    pub coeff_const: Vec<f64>,
    /// Worst defect of the linearized transport equation over the grid.
    pub max_residual: f64,
}

impl LinearizedFields {
    pub fn u_tilde(&self, node: usize, x: &DVector<f64>) -> f64 {
        x.dot(&self.coeff_linear[node]) + self.coeff_const[node]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::QuadraticCost;

    #[allow(clippy::too_many_arguments)]
    fn scalar_model(q: f64, q_bar: f64, s: f64, q_t: f64, q_bar_t: f64, s_t: f64, lambda: f64, horizon: f64) -> QuadraticModel {
        QuadraticModel::new(
            QuadraticCost::scalar(q, q_bar, s).unwrap(),
            QuadraticCost::scalar(q_t, q_bar_t, s_t).unwrap(),
            lambda,
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn separable_riccati_matches_analytic_solution() {
        // dP/dt = P^2, P(T) = 1 => P(t) = 1 / (1 + (T - t))
        let model = scalar_model(0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 400).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        let mut worst = 0.0_f64;
        for k in 0..=400 {
            let t = grid.node(k);
            let exact = 1.0 / (1.0 + (1.0 - t));
            worst = worst.max((tables.p(k)[(0, 0)] - exact).abs());
        }
        assert!(worst <= 1e-8, "max error {worst}");
        assert!((tables.p(0)[(0, 0)] - 0.5).abs() <= 1e-8);
    }

    #[test]
    fn tanh_riccati_matches_analytic_solution() {
        // dP/dt = P^2 - 1, P(T) = 0 => P(t) = tanh(T - t)
        let model = scalar_model(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5);
        let grid = TimeGrid::new(0.0, 0.5, 400).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        for k in [0, 100, 399, 400] {
            let exact = (0.5 - grid.node(k)).tanh();
            assert!((tables.p(k)[(0, 0)] - exact).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_cost_gives_zero_tables() {
        let model = scalar_model(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0);
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        for k in 0..=16 {
            assert_eq!(tables.p(k)[(0, 0)], 0.0);
            assert_eq!(tables.sigma(k)[(0, 0)], 0.0);
            assert_eq!(tables.gamma(k)[(0, 0)], 0.0);
        }
    }

    #[test]
    fn terminal_conditions_are_exact() {
        let model = scalar_model(0.4, 0.6, 1.3, 0.2, 0.9, -0.7, 2.0, 0.8);
        let grid = TimeGrid::new(0.0, 0.8, 8).unwrap();
        let m1 = 1.25;
        let tables = solve_riccati(&model, &grid, m1).unwrap();
        let m = grid.intervals();
        assert_eq!(tables.p(m), &model.terminal().state_coeff());
        assert_eq!(tables.sigma(m), &model.terminal().mean_coupling(m1));
        assert_eq!(tables.gamma(m), &model.terminal().mean_quad());
        assert_eq!(tables.gamma_m1(m)[(0, 0)], 0.0);
    }

    #[test]
    fn gamma_is_mass_derivative_of_sigma() {
        let model = scalar_model(0.5, 0.8, 1.2, 0.3, 0.4, 0.6, 2.5, 0.9);
        let grid = TimeGrid::new(0.0, 0.9, 128).unwrap();
        let h = 1e-4;
        let base = solve_riccati(&model, &grid, 1.0).unwrap();
        let up = solve_riccati(&model, &grid, 1.0 + h).unwrap();
        let dn = solve_riccati(&model, &grid, 1.0 - h).unwrap();
        for k in [0, 31, 64, 128] {
            let fd = (up.sigma(k) - dn.sigma(k)) / (2.0 * h);
            assert!(max_abs_entry(&(&fd - base.gamma(k))) <= 1e-6);
            let fd2 = (up.gamma(k) - dn.gamma(k)) / (2.0 * h);
            assert!(max_abs_entry(&(&fd2 - base.gamma_m1(k))) <= 1e-6);
        }
    }

    #[test]
    fn value_closed_form_scalar_tanh() {
        let model = scalar_model(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5);
        let grid = TimeGrid::new(0.0, 0.5, 400).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        let x = Ensemble::from_scalars(&[1.0]).unwrap();
        let v = tables.value_closed_form(&x, 0).unwrap();
        assert!((v - 0.5 * 0.5_f64.tanh()).abs() <= 1e-9);
        assert!(tables.value_closed_form(&x, 1000).is_err());
    }

    #[test]
    fn residuals_vanish_on_random_instances() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..10 {
            let n = rng.gen_range(1..=3);
            let rand_psd = |rng: &mut StdRng| {
                let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.7..0.7));
                &l * l.transpose()
            };
            let rand_s = |rng: &mut StdRng| DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.8..0.8));
            let model = QuadraticModel::new(
                QuadraticCost::new(rand_psd(&mut rng), rand_psd(&mut rng), rand_s(&mut rng)).unwrap(),
                QuadraticCost::new(rand_psd(&mut rng), rand_psd(&mut rng), rand_s(&mut rng)).unwrap(),
                rng.gen_range(0.8..3.0),
                rng.gen_range(0.4..1.0),
            )
            .unwrap();
            let grid = TimeGrid::new(0.0, model.horizon(), 32).unwrap();
            let m1 = rng.gen_range(0.5..1.5);
            let tables = solve_riccati(&model, &grid, m1).unwrap();
            let ens = Ensemble::new(
                (0..5)
                    .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5)))
                    .collect(),
            )
            .unwrap();
            for _ in 0..10 {
                let node = rng.gen_range(0..=32);
                let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
                let sr = tables.scalar_master_residual(node, &x, &ens).unwrap();
                let vr = tables.vector_master_residual(node, &x, &ens).unwrap();
                let br = tables.bellman_residual(node, &ens).unwrap();
                assert!(sr.abs() <= 1e-6, "scalar master residual {sr}");
                assert!(vr <= 1e-6, "vector master residual {vr}");
                assert!(br.abs() <= 1e-6, "bellman residual {br}");
            }
        }
    }

    #[test]
    fn mean_flow_trivial_cases() {
        let model = scalar_model(0.6, 0.4, 0.5, 0.2, 0.1, 0.3, 2.0, 0.7);
        let grid = TimeGrid::new(0.0, 0.7, 64).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        let zero = tables.mean_flow(&DVector::zeros(1)).unwrap();
        assert!(zero.iter().all(|v| v[0] == 0.0));

        let free = scalar_model(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.7);
        let free_tables = solve_riccati(&free, &grid, 1.0).unwrap();
        let path = free_tables.mean_flow(&DVector::from_vec(vec![1.5])).unwrap();
        assert!(path.iter().all(|v| v[0] == 1.5));
    }

    #[test]
    fn propagator_matches_analytic_cosh_path() {
        let model = scalar_model(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5);
        let grid = TimeGrid::new(0.0, 0.5, 400).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        let x = Ensemble::from_scalars(&[1.0]).unwrap();
        let path = tables.propagator(&x, 0).unwrap();
        let mut worst = 0.0_f64;
        for (k, ens) in path.iter().enumerate() {
            let s = grid.node(k);
            let exact = (0.5 - s).cosh() / 0.5_f64.cosh();
            worst = worst.max((ens.point(0)[0] - exact).abs());
        }
        assert!(worst <= 1e-6, "max propagator error {worst}");
    }

    #[test]
    fn linearized_fields_zero_perturbation_is_zero() {
        let model = scalar_model(0.5, 0.7, 1.1, 0.2, 0.3, 0.4, 2.0, 0.8);
        let grid = TimeGrid::new(0.0, 0.8, 32).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        let f = tables
            .linearized_fields(&DVector::from_vec(vec![0.9]), 0.0, &DVector::zeros(1))
            .unwrap();
        for k in 0..=32 {
            assert_eq!(f.coeff_linear[k][0], 0.0);
            assert_eq!(f.coeff_const[k], 0.0);
        }
        assert!(f.max_residual <= 1e-12);
    }

    #[test]
    fn linearized_residual_small_on_random_instances() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..6 {
            let model = scalar_model(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..0.5),
                rng.gen_range(0.0..0.5),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(1.0..3.0),
                rng.gen_range(0.4..1.0),
            );
            let grid = TimeGrid::new(0.0, model.horizon(), 64).unwrap();
            let m1 = rng.gen_range(0.6..1.4);
            let tables = solve_riccati(&model, &grid, m1).unwrap();
            let f = tables
                .linearized_fields(
                    &DVector::from_vec(vec![rng.gen_range(-1.0..1.0)]),
                    rng.gen_range(-0.5..0.5),
                    &DVector::from_vec(vec![rng.gen_range(-1.0..1.0)]),
                )
                .unwrap();
            assert!(f.max_residual <= 1e-6, "residual {}", f.max_residual);
        }
    }

    #[test]
    fn grid_refinement_shows_fourth_order() {
        let model = scalar_model(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.5);
        let reference = solve_riccati(&model, &TimeGrid::new(0.0, 0.5, 3200).unwrap(), 1.0).unwrap();
        let err = |m: usize| {
            let t = solve_riccati(&model, &TimeGrid::new(0.0, 0.5, m).unwrap(), 1.0).unwrap();
            let step = 3200 / m;
            (0..=m).fold(0.0_f64, |acc, k| {
                acc.max((t.p(k)[(0, 0)] - reference.p(k * step)[(0, 0)]).abs())
            })
        };
        let coarse = err(25);
        let fine = err(50);
        assert!(
            coarse / fine >= 12.0,
            "refinement factor {} (coarse {coarse:.3e}, fine {fine:.3e})",
            coarse / fine
        );
    }

    #[test]
    fn blowup_guard_trips_on_escaping_integration() {
        // Fixed steps with terminal data this stiff escape immediately; the
        // guard must turn that into an error instead of NaN tables.
        let model = scalar_model(0.0, 0.0, 0.0, 1e6, 0.0, 0.0, 1e-6, 5.0);
        let grid = TimeGrid::new(0.0, 5.0, 64).unwrap();
        assert!(matches!(
            solve_riccati(&model, &grid, 1.0),
            Err(Error::Blowup { .. })
        ));
    }

    #[test]
    fn psd_preserved_along_path() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let qb = DMatrix::from_row_slice(2, 2, &[0.6, -0.2, -0.2, 0.8]);
        let s = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.3, 0.2]);
        let model = QuadraticModel::new(
            QuadraticCost::new(q.clone(), qb.clone(), s.clone()).unwrap(),
            QuadraticCost::new(q * 0.5, qb * 0.5, s).unwrap(),
            2.0,
            1.0,
        )
        .unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 64).unwrap();
        let tables = solve_riccati(&model, &grid, 1.0).unwrap();
        for k in 0..=64 {
            assert!(crate::linalg::min_eigenvalue_sym(tables.p(k)) >= -1e-10);
        }
    }
}
