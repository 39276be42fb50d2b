//! Equal-weight particle ensembles.
//!
//! An ensemble of `N` points in `R^n` stands both for a square-integrable
//! random variable `X` (the i-th point is the value of `X` on the i-th
//! sample-space atom, each with weight `1/N`) and for its law, the empirical
//! measure. Expectations are uniform averages over the points, so the
//! Hilbert-space inner product is `((a,b)) = (1/N) sum_i a_i . b_i`.
//!
//! All cross-particle reductions go through [`stable_sum`], which sums in a
//! canonical order. This makes every statistic bitwise invariant under
//! particle permutation, which the law-invariance contracts require exactly,
//! not just up to rounding.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Sums a set of values in a canonical (sorted) order with compensated
/// accumulation. The result does not depend on the input order.
pub fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    // Neumaier compensation on top of the canonical order.
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values.iter() {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// An element of the Hilbert space of square-integrable random variables,
/// represented as `N` equal-weight points in `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    points: Vec<DVector<f64>>,
    dim: usize,
}

impl Ensemble {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::shape("ensemble must contain at least one particle"));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::shape("particle dimension must be at least 1"));
        }
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::shape(format!(
                "all particles must have dimension {dim}, found {}",
                bad.len()
            )));
        }
        Ok(Self { points, dim })
    }

    /// Builds a 1-D ensemble from scalar values.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| DVector::from_vec(vec![v])).collect())
    }

    /// Builds an ensemble from rows, each row one particle.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.iter().map(|r| DVector::from_vec(r.clone())).collect())
    }

    pub fn zeros(n_particles: usize, dim: usize) -> Result<Self> {
        if n_particles == 0 || dim == 0 {
            return Err(Error::shape("need n_particles >= 1 and dim >= 1"));
        }
        Ok(Self {
            points: vec![DVector::zeros(dim); n_particles],
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    fn check_compatible(&self, other: &Ensemble) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "particle counts differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.dim != other.dim {
            return Err(Error::shape(format!(
                "dimensions differ: {} vs {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }

    /// `((a,b)) = (1/N) sum_i a_i . b_i`. Particles are identified index-wise
    /// (same sample-space atom).
    pub fn inner_product(&self, other: &Ensemble) -> Result<f64> {
        self.check_compatible(other)?;
        let mut dots: Vec<f64> = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| a.dot(b))
            .collect();
        Ok(stable_sum(&mut dots) / self.len() as f64)
    }

    /// Hilbert norm `sqrt(E|X|^2)`.
    pub fn norm(&self) -> f64 {
        let mut sq: Vec<f64> = self.points.iter().map(|p| p.dot(p)).collect();
        (stable_sum(&mut sq) / self.len() as f64).max(0.0).sqrt()
    }

    /// Arithmetic mean of the points.
    pub fn mean(&self) -> DVector<f64> {
        let n = self.len() as f64;
        DVector::from_fn(self.dim, |j, _| {
            let mut col: Vec<f64> = self.points.iter().map(|p| p[j]).collect();
            stable_sum(&mut col) / n
        })
    }

    /// Reorders particles; the empirical law is unchanged.
    pub fn permute(&self, perm: &[usize]) -> Result<Ensemble> {
        if perm.len() != self.len() {
            return Err(Error::Permutation(format!(
                "permutation length {} does not match particle count {}",
                perm.len(),
                self.len()
            )));
        }
        let mut seen = vec![false; self.len()];
        for &p in perm {
            if p >= self.len() || seen[p] {
                return Err(Error::Permutation(format!(
                    "indices must form a permutation of 0..{}",
                    self.len()
                )));
            }
            seen[p] = true;
        }
        Ok(Ensemble {
            points: perm.iter().map(|&p| self.points[p].clone()).collect(),
            dim: self.dim,
        })
    }

    /// Per-particle map, preserving shape.
    pub fn map(&self, f: impl FnMut(&DVector<f64>) -> DVector<f64>) -> Ensemble {
        Ensemble {
            points: self.points.iter().map(f).collect(),
            dim: self.dim,
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &Ensemble) {
        for (a, b) in self.points.iter_mut().zip(&other.points) {
            a.axpy(alpha, b, 1.0);
        }
    }

    pub fn scale(&self, alpha: f64) -> Ensemble {
        self.map(|p| p * alpha)
    }

    pub fn add(&self, other: &Ensemble) -> Ensemble {
        Ensemble {
            points: self
                .points
                .iter()
                .zip(&other.points)
                .map(|(a, b)| a + b)
                .collect(),
            dim: self.dim,
        }
    }

    pub fn sub(&self, other: &Ensemble) -> Ensemble {
        Ensemble {
            points: self
                .points
                .iter()
                .zip(&other.points)
                .map(|(a, b)| a - b)
                .collect(),
            dim: self.dim,
        }
    }

    /// Hilbert distance `||a - b||`.
    pub fn distance(&self, other: &Ensemble) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.sub(other).norm())
    }

    /// Samples `n_particles` points from `N(mean, cov)` (Box-Muller normals
    /// pushed through the Cholesky factor of `cov`).
    pub fn sample_gaussian<R: Rng>(
        rng: &mut R,
        n_particles: usize,
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
    ) -> Result<Ensemble> {
        let dim = mean.len();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::shape(format!(
                "covariance must be {dim}x{dim}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))?;
        let l = chol.l();
        let standard_normal = move |rng: &mut R| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let points = (0..n_particles)
            .map(|_| {
                let z = DVector::from_fn(dim, |_, _| standard_normal(rng));
                mean + &l * z
            })
            .collect();
        Ensemble::new(points)
    }

    /// CSV with header `x0,...,x{n-1}`, one row per particle.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("x{j}"));
        }
        out.push('\n');
        for p in &self.points {
            for j in 0..self.dim {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{}", p[j]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Ensemble> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::shape("empty ensemble CSV"))?;
        let dim = header.split(',').count();
        let mut rows = Vec::new();
        for line in lines {
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::shape(format!("bad CSV number: {e}")))?;
            if row.len() != dim {
                return Err(Error::shape(format!(
                    "CSV row has {} fields, header has {dim}",
                    row.len()
                )));
            }
            rows.push(row);
        }
        let ens = Ensemble::from_rows(&rows)?;
        if ens.dim != dim {
            return Err(Error::shape("CSV dimension mismatch"));
        }
        Ok(ens)
    }
}

/// Uniform time grid on `[t0, horizon]` with `m` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    m: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, m: usize) -> Result<Self> {
        if horizon.partial_cmp(&t0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} must exceed start time {t0}"
            )));
        }
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 intervals, got {m}"
            )));
        }
        Ok(Self { t0, horizon, m })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of intervals; there are `m + 1` nodes.
    pub fn intervals(&self) -> usize {
        self.m
    }

    pub fn n_nodes(&self) -> usize {
        self.m + 1
    }

    pub fn dt(&self) -> f64 {
        (self.horizon - self.t0) / self.m as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.m {
            self.horizon
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.m).map(|k| self.node(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(values: &[f64]) -> Ensemble {
        Ensemble::from_scalars(values).unwrap()
    }

    #[test]
    fn inner_product_matches_expectation() {
        let a = ens(&[1.0, -1.0]);
        let b = ens(&[1.0, -1.0]);
        assert_eq!(a.inner_product(&b).unwrap(), 1.0);

        let c = ens(&[1.0, 1.0]);
        assert_eq!(a.inner_product(&c).unwrap(), 0.0);

        let a2 = Ensemble::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b2 = Ensemble::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(a2.inner_product(&b2).unwrap(), 2.5);
    }

    #[test]
    fn inner_product_rejects_mismatched_shapes() {
        let a = ens(&[1.0, 2.0]);
        let b = ens(&[1.0, 2.0, 3.0]);
        assert!(matches!(a.inner_product(&b), Err(Error::Shape(_))));

        let c = Ensemble::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!(matches!(a.inner_product(&c), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_examples() {
        assert_eq!(ens(&[1.0, -1.0]).mean()[0], 0.0);
        let single = Ensemble::from_rows(&[vec![2.0, 4.0]]).unwrap();
        assert_eq!(single.mean(), DVector::from_vec(vec![2.0, 4.0]));
        assert_eq!(ens(&[0.0, 1.0, 2.0]).mean()[0], 1.0);
    }

    #[test]
    fn permute_reorders_and_validates() {
        let a = ens(&[1.0, 2.0]);
        let p = a.permute(&[1, 0]).unwrap();
        assert_eq!(p.point(0)[0], 2.0);
        assert_eq!(p.point(1)[0], 1.0);

        let id = a.permute(&[0, 1]).unwrap();
        assert_eq!(id, a);

        assert!(a.permute(&[0, 0]).is_err());
        assert!(a.permute(&[0]).is_err());
        assert!(a.permute(&[0, 2]).is_err());
    }

    #[test]
    fn stable_sum_is_order_independent() {
        let vals = [1.0e16, 3.7, -1.0e16, 0.1, -2.9, 1e-9];
        let mut fwd: Vec<f64> = vals.to_vec();
        let mut rev: Vec<f64> = vals.iter().rev().copied().collect();
        assert_eq!(stable_sum(&mut fwd).to_bits(), stable_sum(&mut rev).to_bits());
    }

    #[test]
    fn statistics_are_bitwise_permutation_invariant() {
        let a = Ensemble::from_rows(&[
            vec![0.1, -0.7],
            vec![1.0e8, 2.0],
            vec![-3.3, 0.25],
            vec![7.0, -1.0e8],
        ])
        .unwrap();
        let p = a.permute(&[2, 0, 3, 1]).unwrap();
        assert_eq!(a.mean(), p.mean());
        assert_eq!(a.norm().to_bits(), p.norm().to_bits());
    }

    #[test]
    fn csv_round_trip() {
        let a = Ensemble::from_rows(&[vec![1.0, 2.5], vec![-0.125, 3.0]]).unwrap();
        let text = a.to_csv();
        assert!(text.starts_with("x0,x1\n"));
        let back = Ensemble::from_csv(&text).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn grid_nodes_are_uniform() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(TimeGrid::new(0.0, 0.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 1).is_err());
    }
}
