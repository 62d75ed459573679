//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalue floor applied before taking symmetric square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Symmetrise `m` in place as `(m + m')/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&mapped) * v.transpose();
    symmetrize(&mut out);
    out
}

/// Symmetric square root `m^{1/2}` with eigenvalues floored at [`EIGEN_FLOOR`].
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(EIGEN_FLOOR).sqrt())
}

/// Symmetric inverse square root `m^{-1/2}` with eigenvalues floored at [`EIGEN_FLOOR`].
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| 1.0 / l.max(EIGEN_FLOOR).sqrt())
}

/// Project the spectrum of a symmetric matrix into `[lo, hi]`.
pub fn clamp_spectrum(m: &DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].clamp(lo, hi));
    }
    spectral_map(m, |l| l.clamp(lo, hi))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Ratio of largest to smallest eigenvalue of a symmetric PSD matrix.
/// Returns `f64::INFINITY` when the smallest eigenvalue is not positive.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Operator (spectral) norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or_else(|| Error::SingularDesign {
        cond: condition_number(m),
        limit: f64::INFINITY,
    })?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn ols_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Coefficient of determination of the least-squares line of `y` on `x`.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let (slope, icpt) = ols_line(x, y);
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = sym_sqrt(&m);
        assert!((&r * &r - &m).abs().max() < 1e-12);
        let ir = sym_inv_sqrt(&m);
        let id = &ir * &m * &ir;
        assert!((id - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn clamp_bounds_spectrum() {
        let m = DMatrix::from_row_slice(2, 2, &[1e5, 0.0, 0.0, 1e-6]);
        let ev = sym_eigenvalues(&clamp_spectrum(&m, 1e-3, 1e3));
        assert!((ev[0] - 1e-3).abs() < 1e-12 && (ev[1] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn line_fit_exact() {
        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 5.0, 7.0];
        let (s, c) = ols_line(&x, &y);
        assert!((s - 2.0).abs() < 1e-14 && (c - 1.0).abs() < 1e-14);
        assert!((r_squared(&x, &y) - 1.0).abs() < 1e-14);
    }
}
