//! Small helpers on dense symmetric matrices.

use nalgebra::{DMatrix, SymmetricEigen};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Spectral (operator 2-) norm of a symmetric matrix.
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &e| acc.max(e.abs()))
}

pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &e| acc.min(e))
}

pub fn max_abs_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()))
}

/// `exp(scale * m)` for symmetric `m`, via the spectral decomposition.
pub fn sym_expm(m: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let q = eig.eigenvectors;
    let exp_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| (scale * e).exp()));
    &q * exp_diag * q.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -5.0]);
        assert!((sym_spectral_norm(&m) - 5.0).abs() < 1e-12);
        assert_eq!(sym_spectral_norm(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn expm_matches_scalar_exp() {
        let m = DMatrix::from_row_slice(1, 1, &[0.7]);
        let e = sym_expm(&m, -2.0);
        assert!((e[(0, 0)] - (-1.4_f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn expm_of_symmetric_2x2() {
        // exp of [[0, a], [a, 0]] = [[cosh a, sinh a], [sinh a, cosh a]]
        let a = 0.3;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, a, a, 0.0]);
        let e = sym_expm(&m, 1.0);
        assert!((e[(0, 0)] - a.cosh()).abs() < 1e-12);
        assert!((e[(0, 1)] - a.sinh()).abs() < 1e-12);
    }
}
