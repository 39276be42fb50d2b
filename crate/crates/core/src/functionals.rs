//! Cost functionals on the Hilbert space of random variables.
//!
//! A functional here is `F(X) = E f(X, L_X)` for a pointwise cost `f(x, m)`
//! depending on the state and its law. The solver only ever consumes three
//! things: the value `F(X)`, the Hilbert gradient `D_X F(X)` (which equals
//! the spatial gradient of the functional derivative evaluated along the
//! particles), and a certified Lipschitz bound `c` for that gradient.
//!
//! The functional derivative `F(x, m)` is exposed with an explicit
//! total-mass parameter `m1`: the measure passed to it is `m1` times the
//! empirical law of the carrier ensemble, so first moments are unnormalized
//! (`xbar = m1 * mean`). That bookkeeping is what makes second functional
//! derivatives symmetric and lets the mean-interaction Riccati coefficient
//! be differentiated in `m1`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::{stable_sum, Ensemble};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue_sym, sym_spectral_norm, symmetrize};

/// A cost functional `F(X) = E f(X, L_X)` with Lipschitz gradient.
pub trait CostFunctional: Send + Sync {
    fn dim(&self) -> usize;

    /// `F(X) = (1/N) sum_i f(x_i, m)` with `m` the empirical law of `x`.
    fn eval(&self, x: &Ensemble) -> Result<f64>;

    /// Functional derivative `F(x, m)` at the point `x`, with
    /// `m = m1 * empirical(carrier)`.
    fn functional_derivative(&self, x: &DVector<f64>, carrier: &Ensemble, m1: f64) -> Result<f64>;

    /// Spatial gradient `D_x F(x, m)` of the functional derivative.
    fn functional_derivative_grad(
        &self,
        x: &DVector<f64>,
        carrier: &Ensemble,
        m1: f64,
    ) -> Result<DVector<f64>>;

    /// Certified upper bound `c` on the Lipschitz constant of the Hilbert
    /// gradient: `||D_X F(X1) - D_X F(X2)|| <= c ||X1 - X2||`, and
    /// `||D_X F(0)|| <= c`.
    fn lipschitz_constant(&self) -> f64;

    /// Per-particle Hilbert gradient: the i-th output point is
    /// `D_x F(x_i, m)` with `m` the empirical law of `x`.
    fn grad(&self, x: &Ensemble) -> Result<Ensemble> {
        if x.dim() != self.dim() {
            return Err(Error::shape(format!(
                "functional has dimension {}, ensemble has {}",
                self.dim(),
                x.dim()
            )));
        }
        let points = x
            .points()
            .iter()
            .map(|p| self.functional_derivative_grad(p, x, 1.0))
            .collect::<Result<Vec<_>>>()?;
        Ensemble::new(points)
    }
}

fn check_dims(f: &dyn CostFunctional, x: &Ensemble) -> Result<()> {
    if x.dim() != f.dim() {
        return Err(Error::shape(format!(
            "functional has dimension {}, ensemble has {}",
            f.dim(),
            x.dim()
        )));
    }
    Ok(())
}

/// One side (running or terminal) of a quadratic cost:
/// `f(x, m) = 1/2 (x - S xbar)^T Qbar (x - S xbar) + 1/2 x^T Q x`.
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    q_bar: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl QuadraticCost {
    /// `q` and `q_bar` must be symmetric positive semidefinite.
    pub fn new(q: DMatrix<f64>, q_bar: DMatrix<f64>, s: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        for (name, m) in [("q", &q), ("q_bar", &q_bar), ("s", &s)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::shape(format!(
                    "matrix {name} must be {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let scale = 1.0_f64
            .max(crate::linalg::max_abs_entry(&q))
            .max(crate::linalg::max_abs_entry(&q_bar));
        for (name, m) in [("q", &q), ("q_bar", &q_bar)] {
            if crate::linalg::max_abs_entry(&(m - m.transpose())) > 1e-9 * scale {
                return Err(Error::InvalidArgument(format!("matrix {name} must be symmetric")));
            }
            if min_eigenvalue_sym(&symmetrize(m)) < -1e-10 * scale {
                return Err(Error::InvalidArgument(format!(
                    "matrix {name} must be positive semidefinite"
                )));
            }
        }
        Ok(Self {
            q: symmetrize(&q),
            q_bar: symmetrize(&q_bar),
            s,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            q: DMatrix::zeros(dim, dim),
            q_bar: DMatrix::zeros(dim, dim),
            s: DMatrix::zeros(dim, dim),
        }
    }

    /// Scalar (n = 1) convenience constructor.
    pub fn scalar(q: f64, q_bar: f64, s: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, q_bar),
            DMatrix::from_element(1, 1, s),
        )
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_bar(&self) -> &DMatrix<f64> {
        &self.q_bar
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// `Q + Qbar`, the state-quadratic coefficient.
    pub fn state_coeff(&self) -> DMatrix<f64> {
        &self.q + &self.q_bar
    }

    /// `S^T Qbar S`, the mean-quadratic coefficient.
    pub fn mean_quad(&self) -> DMatrix<f64> {
        self.s.transpose() * &self.q_bar * &self.s
    }

    /// `S^T Qbar S m1 - Qbar S - S^T Qbar`, the state-mean coupling. This
    /// matrix is symmetric.
    pub fn mean_coupling(&self, m1: f64) -> DMatrix<f64> {
        self.mean_quad() * m1 - &self.q_bar * &self.s - self.s.transpose() * &self.q_bar
    }

    /// Second functional derivative `dF/dm (x, m)(xi)`; symmetric in
    /// `(x, xi)`.
    pub fn second_functional_derivative(
        &self,
        x: &DVector<f64>,
        xi: &DVector<f64>,
        carrier: &Ensemble,
        m1: f64,
    ) -> f64 {
        let xbar = carrier.mean() * m1;
        let a = self.mean_quad();
        (xbar.transpose() * &a * (x + xi))[(0, 0)]
            + (xi.transpose() * self.mean_coupling(m1) * x)[(0, 0)]
    }
}

impl CostFunctional for QuadraticCost {
    fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn eval(&self, x: &Ensemble) -> Result<f64> {
        check_dims(self, x)?;
        let state = self.state_coeff();
        let mut quads: Vec<f64> = x
            .points()
            .iter()
            .map(|p| (p.transpose() * &state * p)[(0, 0)])
            .collect();
        let mean_term = {
            let xbar = x.mean();
            (xbar.transpose() * self.mean_coupling(1.0) * &xbar)[(0, 0)]
        };
        Ok(0.5 * stable_sum(&mut quads) / x.len() as f64 + 0.5 * mean_term)
    }

    fn functional_derivative(&self, x: &DVector<f64>, carrier: &Ensemble, m1: f64) -> Result<f64> {
        if x.len() != self.dim() || carrier.dim() != self.dim() {
            return Err(Error::shape("dimension mismatch in functional derivative"));
        }
        if m1 <= 0.0 {
            return Err(Error::InvalidArgument("m1 must be positive".into()));
        }
        let xbar = carrier.mean() * m1;
        let quad = 0.5 * (x.transpose() * self.state_coeff() * x)[(0, 0)];
        let cross = (xbar.transpose() * self.mean_coupling(m1) * x)[(0, 0)];
        let mean = 0.5 * (xbar.transpose() * self.mean_quad() * &xbar)[(0, 0)];
        Ok(quad + cross + mean)
    }

    fn functional_derivative_grad(
        &self,
        x: &DVector<f64>,
        carrier: &Ensemble,
        m1: f64,
    ) -> Result<DVector<f64>> {
        if x.len() != self.dim() || carrier.dim() != self.dim() {
            return Err(Error::shape("dimension mismatch in functional derivative"));
        }
        let xbar = carrier.mean() * m1;
        Ok(self.state_coeff() * x + self.mean_coupling(m1) * xbar)
    }

    // The mean term of D_X F moves at most as fast as the state term plus the
    // coupling norm, because E is a contraction on H. Tighter than the
    // pointwise route through the measure-Lipschitz condition, and still a
    // sound upper bound for both the gradient bound at zero and the
    // Lipschitz property.
    fn lipschitz_constant(&self) -> f64 {
        sym_spectral_norm(&self.state_coeff()) + sym_spectral_norm(&self.mean_coupling(1.0))
    }
}

type KernelFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;
type KernelGradFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Interaction cost `f(x, m) = 1/2 int K(x, xi) m(dxi)` for a symmetric
/// kernel `K`. The functional derivative is `F(x, m) = int K(x, xi) m(dxi)`.
#[derive(Clone)]
pub struct KernelCost {
    dim: usize,
    kernel: Arc<KernelFn>,
    kernel_grad: Arc<KernelGradFn>,
    /// Constant `L` with
    /// `|D_x K(x1, xi1) - D_x K(x2, xi2)| <= L (|x1 - x2| + |xi1 - xi2|)`
    /// and `|D_x K(0, 0)| <= L`; supplied analytically with the kernel.
    mixed_lipschitz: f64,
}

impl KernelCost {
    pub fn new(
        dim: usize,
        kernel: Arc<KernelFn>,
        kernel_grad: Arc<KernelGradFn>,
        mixed_lipschitz: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("kernel dimension must be at least 1"));
        }
        if mixed_lipschitz.is_nan() || mixed_lipschitz < 0.0 {
            return Err(Error::InvalidArgument(
                "mixed Lipschitz constant must be nonnegative".into(),
            ));
        }
        Ok(Self {
            dim,
            kernel,
            kernel_grad,
            mixed_lipschitz,
        })
    }

    /// `K(x, xi) = x . xi`; `D_x K = xi`, mixed Lipschitz constant 1.
    pub fn bilinear(dim: usize) -> Self {
        Self {
            dim,
            kernel: Arc::new(|x: &DVector<f64>, xi: &DVector<f64>| x.dot(xi)),
            kernel_grad: Arc::new(|_x: &DVector<f64>, xi: &DVector<f64>| xi.clone()),
            mixed_lipschitz: 1.0,
        }
    }

    /// `K(x, xi) = exp(-|x - xi|^2 / (2 w^2))`.
    ///
    /// `D_x K = -(x - xi)/w^2 * K`, and the mixed second derivatives are
    /// bounded by `1/w^2` (the factor `|1 - r^2/w^2| exp(-r^2/(2w^2))` never
    /// exceeds 1), so the mixed Lipschitz constant is `1/w^2`.
    pub fn gaussian(dim: usize, width: f64) -> Result<Self> {
        if width.is_nan() || width <= 0.0 {
            return Err(Error::InvalidArgument("gaussian width must be positive".into()));
        }
        let w2 = width * width;
        Ok(Self {
            dim,
            kernel: Arc::new(move |x: &DVector<f64>, xi: &DVector<f64>| {
                let d = x - xi;
                (-d.dot(&d) / (2.0 * w2)).exp()
            }),
            kernel_grad: Arc::new(move |x: &DVector<f64>, xi: &DVector<f64>| {
                let d = x - xi;
                let k = (-d.dot(&d) / (2.0 * w2)).exp();
                d * (-k / w2)
            }),
            mixed_lipschitz: 1.0 / w2,
        })
    }

    pub fn kernel_value(&self, x: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        (self.kernel)(x, xi)
    }
}

impl CostFunctional for KernelCost {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Ensemble) -> Result<f64> {
        check_dims(self, x)?;
        let n = x.len();
        let mut terms = Vec::with_capacity(n * n);
        for xi in x.points() {
            for xj in x.points() {
                terms.push((self.kernel)(xi, xj));
            }
        }
        Ok(0.5 * stable_sum(&mut terms) / (n * n) as f64)
    }

    fn functional_derivative(&self, x: &DVector<f64>, carrier: &Ensemble, m1: f64) -> Result<f64> {
        if x.len() != self.dim || carrier.dim() != self.dim {
            return Err(Error::shape("dimension mismatch in functional derivative"));
        }
        if m1 <= 0.0 {
            return Err(Error::InvalidArgument("m1 must be positive".into()));
        }
        let mut terms: Vec<f64> = carrier.points().iter().map(|xi| (self.kernel)(x, xi)).collect();
        Ok(m1 * stable_sum(&mut terms) / carrier.len() as f64)
    }

    fn functional_derivative_grad(
        &self,
        x: &DVector<f64>,
        carrier: &Ensemble,
        m1: f64,
    ) -> Result<DVector<f64>> {
        if x.len() != self.dim || carrier.dim() != self.dim {
            return Err(Error::shape("dimension mismatch in functional derivative"));
        }
        let grads: Vec<DVector<f64>> = carrier
            .points()
            .iter()
            .map(|xi| (self.kernel_grad)(x, xi))
            .collect();
        let n = carrier.len() as f64;
        Ok(DVector::from_fn(self.dim, |j, _| {
            let mut col: Vec<f64> = grads.iter().map(|g| g[j]).collect();
            m1 * stable_sum(&mut col) / n
        }))
    }

    fn lipschitz_constant(&self) -> f64 {
        2.0 * self.mixed_lipschitz
    }
}

/// A complete quadratic problem: running and terminal
/// quadratic costs, control penalty and horizon.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    running: QuadraticCost,
    terminal: QuadraticCost,
    lambda: f64,
    horizon: f64,
}

impl QuadraticModel {
    pub fn new(
        running: QuadraticCost,
        terminal: QuadraticCost,
        lambda: f64,
        horizon: f64,
    ) -> Result<Self> {
        if running.dim() != terminal.dim() {
            return Err(Error::shape(format!(
                "running and terminal costs have different dimensions: {} vs {}",
                running.dim(),
                terminal.dim()
            )));
        }
        if lambda.is_nan() || lambda <= 0.0 {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        if horizon.is_nan() || horizon <= 0.0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        Ok(Self {
            running,
            terminal,
            lambda,
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.running.dim()
    }

    pub fn running(&self) -> &QuadraticCost {
        &self.running
    }

    pub fn terminal(&self) -> &QuadraticCost {
        &self.terminal
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Certified Lipschitz bound shared by the pair (max over both sides).
    pub fn lipschitz_constant(&self) -> f64 {
        self.running
            .lipschitz_constant()
            .max(self.terminal.lipschitz_constant())
    }
}

/// Shared Lipschitz bound for an arbitrary (running, terminal) pair.
pub fn pair_lipschitz(running: &dyn CostFunctional, terminal: &dyn CostFunctional) -> f64 {
    running.lipschitz_constant().max(terminal.lipschitz_constant())
}

/// Empirical monotonicity pairing
/// `int (F(x, m1) - F(x, m2)) d(m1 - m2)(x)` for two empirical laws.
pub fn measure_monotonicity_gap(
    f: &dyn CostFunctional,
    law1: &Ensemble,
    law2: &Ensemble,
) -> Result<f64> {
    let diff_mean = |law: &Ensemble| -> Result<f64> {
        let mut terms = law
            .points()
            .iter()
            .map(|x| {
                Ok(f.functional_derivative(x, law1, 1.0)? - f.functional_derivative(x, law2, 1.0)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(stable_sum(&mut terms) / law.len() as f64)
    };
    Ok(diff_mean(law1)? - diff_mean(law2)?)
}
