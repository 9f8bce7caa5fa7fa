//! Dense complex linear-algebra helpers shared by the channel and precoder code.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest accepted backward error `‖AX − B‖ / (‖A‖‖X‖ + ‖B‖)` of a direct solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Hermitian square root of a Hermitian PSD matrix.
///
/// Eigenvalues slightly below zero (rounding) are clipped; anything below
/// `-1e-9 · max(1, λ_max)` is rejected.
pub fn hermitian_psd_sqrt(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("{}x{} is not square", n, a.ncols())));
    }
    if n == 0 {
        return Ok(a.clone());
    }
    let scale = a.norm().max(1.0);
    if (a - a.adjoint()).norm() > 1e-10 * scale {
        return Err(Error::NotPsd("matrix is not Hermitian".into()));
    }
    let herm = (a + a.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(herm);
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_ev < -1e-9 * max_ev.max(1.0) {
        return Err(Error::NotPsd(format!("minimum eigenvalue {min_ev:e}")));
    }
    let roots = CVector::from_iterator(n, eig.eigenvalues.iter().map(|&v| c(v.max(0.0).sqrt())));
    let u = &eig.eigenvectors;
    Ok(u * CMatrix::from_diagonal(&roots) * u.adjoint())
}

/// Symmetric square root of a real symmetric matrix, negative eigenvalues clipped at zero.
pub fn real_psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&roots) * u.transpose()
}

/// Solves `A X = B` by LU factorization and rejects the result when the
/// backward error exceeds [`SOLVE_RESIDUAL_TOL`].
pub fn solve_checked(a: &CMatrix, b: &CMatrix, context: &str) -> Result<CMatrix> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "{context}: system {}x{} with right-hand side {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let x = a.clone().lu().solve(b).ok_or_else(|| Error::Singular {
        context: context.to_string(),
        residual: f64::INFINITY,
    })?;
    let residual = relative_residual(a, &x, b);
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::Singular { context: context.to_string(), residual });
    }
    Ok(x)
}

/// Real counterpart of [`solve_checked`].
pub fn solve_checked_real(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let x = a.clone().lu().solve(b).ok_or_else(|| Error::Singular {
        context: context.to_string(),
        residual: f64::INFINITY,
    })?;
    let denom = a.norm() * x.norm() + b.norm();
    let residual = if denom == 0.0 { 0.0 } else { (a * &x - b).norm() / denom };
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::Singular { context: context.to_string(), residual });
    }
    Ok(x)
}

pub fn relative_residual(a: &CMatrix, x: &CMatrix, b: &CMatrix) -> f64 {
    let denom = a.norm() * x.norm() + b.norm();
    if denom == 0.0 {
        0.0
    } else {
        (a * x - b).norm() / denom
    }
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &CMatrix) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn condition_number_real(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest eigenvalue of the Hermitian part of `a`.
pub fn min_hermitian_eigenvalue(a: &CMatrix) -> f64 {
    let herm = (a + a.adjoint()).scale(0.5);
    SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_sqrt_squares_back() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[c(2.0), C64::new(0.5, 0.5), C64::new(0.5, -0.5), c(1.0)],
        );
        let r = hermitian_psd_sqrt(&a).unwrap();
        assert!((&r * &r - &a).norm() < 1e-12);
        assert!((&r - r.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let a = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0), c(-0.5)]));
        assert!(matches!(hermitian_psd_sqrt(&a), Err(Error::NotPsd(_))));
    }

    #[test]
    fn real_sqrt_clips_negative_eigenvalues() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-15]);
        let r = real_psd_sqrt(&a);
        assert!(r.iter().all(|v| v.is_finite()));
        assert!((r[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_reported() {
        let a = CMatrix::from_element(2, 2, c(1.0));
        let b = CMatrix::from_element(2, 1, c(1.0));
        assert!(matches!(solve_checked(&a, &b, "test"), Err(Error::Singular { .. })));
    }
}
