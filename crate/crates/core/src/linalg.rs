//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Natural log of the determinant of a symmetric positive definite matrix,
/// or `None` if the Cholesky factorization fails.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = Cholesky::new(m.clone())?;
    let l = chol.l_dirty();
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Ratio of the largest to the smallest eigenvalue of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Cholesky factor of an SPD matrix with the inverse and log-determinant
/// precomputed; used for repeated Gaussian log-density evaluations.
#[derive(Debug, Clone)]
pub struct GaussianFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    dim: usize,
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

impl GaussianFactor {
    pub fn new(cov: &DMatrix<f64>) -> Option<Self> {
        let dim = cov.nrows();
        let chol = Cholesky::new(cov.clone())?;
        let l = chol.l_dirty();
        let log_det = 2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>();
        Some(Self { chol, log_det, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Lower-triangular factor `L` with `L L^T = cov`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `L^{-1} v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.l_dirty().solve_lower_triangular(v).expect("non-singular Cholesky factor")
    }

    /// `cov^{-1} m`.
    pub fn solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(m)
    }

    /// Log density of `N(0, cov)` at `x`.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let z = self.whiten(x);
        -0.5 * (self.dim as f64 * LN_2PI + self.log_det + z.norm_squared())
    }

    /// Log density normalizing constant, `-(d ln 2pi + ln|cov|)/2`.
    pub fn log_norm(&self) -> f64 {
        -0.5 * (self.dim as f64 * LN_2PI + self.log_det)
    }
}

/// `ln(sum(exp(v)))` without overflow.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_matches_lu() {
        let m = DMatrix::<f64>::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let lu = m.clone().determinant().ln();
        assert!((log_det_spd(&m).unwrap() - lu).abs() < 1e-13);
        let f = GaussianFactor::new(&m).unwrap();
        assert!((f.log_det() - lu).abs() < 1e-13);
    }

    #[test]
    fn log_density_standard_normal() {
        let f = GaussianFactor::new(&DMatrix::identity(1, 1)).unwrap();
        let x = DVector::from_vec(vec![1.0]);
        assert!((f.log_density(&x) - (-0.5 * LN_2PI - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn indefinite_matrix_has_no_factor() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(log_det_spd(&m).is_none());
        assert!(min_eigenvalue(&m) < 0.0);
    }
}
