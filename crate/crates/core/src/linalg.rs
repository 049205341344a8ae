//! Complex dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// (A + Aᴴ)/2
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * c(0.5)
}

pub fn frobenius_relative(a: &CMat, reference: &CMat) -> f64 {
    let denom = reference.norm();
    if denom == 0.0 {
        return a.norm();
    }
    (a - reference).norm() / denom
}

pub fn real_trace(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Hermitian PSD projection used for numerically noisy covariance matrices.
///
/// Eigenvalues below `-rel_tol * λ_max` are a genuine model error; smaller
/// negative eigenvalues are clipped to zero. Returns the clipped matrix and
/// its Hermitian square root.
pub fn clip_psd(m: &CMat, rel_tol: f64) -> Result<(CMat, CMat)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Contract(format!("{}x{} matrix is not square", n, m.ncols())));
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_min < -rel_tol * lambda_max.max(f64::MIN_POSITIVE) {
        return Err(Error::Model(format!(
            "matrix not positive semidefinite: λ_min = {lambda_min:e}, λ_max = {lambda_max:e}"
        )));
    }
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    let mut scaled_sqrt = u.clone();
    for (j, &l) in clipped.iter().enumerate() {
        scaled.column_mut(j).scale_mut(l);
        scaled_sqrt.column_mut(j).scale_mut(l.sqrt());
    }
    let psd = hermitian_part(&(&scaled * u.adjoint()));
    let sqrt = hermitian_part(&(&scaled_sqrt * u.adjoint()));
    Ok((psd, sqrt))
}

/// Solves `A x = b` for Hermitian positive definite `A`.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))?;
    Ok(chol.solve(b))
}

pub fn solve_hpd_vec(a: &CMat, b: &CVec) -> Result<CVec> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))?;
    Ok(chol.solve(b))
}

pub fn inverse_hpd(a: &CMat) -> Result<CMat> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))?;
    Ok(chol.inverse())
}

/// `diag(m) ⊙ v` as a column-scaled copy: returns `m * diag(d)`.
pub fn scale_columns(m: &CMat, d: &DVector<f64>) -> CMat {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.scale_mut(d[j]);
    }
    out
}

/// `diag(d) * m`
pub fn scale_rows(m: &CMat, d: &DVector<f64>) -> CMat {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row.scale_mut(d[i]);
    }
    out
}

/// Real diagonal of a (Hermitian) matrix.
pub fn real_diagonal(m: &CMat) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.diagonal().iter().map(|z| z.re))
}

pub fn diag_matrix(d: &DVector<f64>) -> CMat {
    CMat::from_diagonal(&d.map(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_psd_keeps_psd_matrix() {
        let a = CMat::from_fn(3, 3, |i, j| C64::new((i + j) as f64, i as f64 - j as f64));
        let m = &a * a.adjoint();
        let (psd, sqrt) = clip_psd(&m, 1e-10).unwrap();
        assert!(frobenius_relative(&psd, &m) < 1e-12);
        assert!(frobenius_relative(&(&sqrt * &sqrt), &m) < 1e-10);
    }

    #[test]
    fn clip_psd_rejects_indefinite() {
        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0), c(-0.5)]));
        assert!(matches!(clip_psd(&m, 1e-10), Err(Error::Model(_))));
    }

    #[test]
    fn hpd_solve_matches_product() {
        let a = CMat::from_fn(4, 4, |i, j| C64::new(1.0 / (1 + i + j) as f64, (i as f64 - j as f64) * 0.1));
        let m = &a * a.adjoint() + CMat::identity(4, 4);
        let x = CVec::from_fn(4, |i, _| C64::new(i as f64, 1.0));
        let b = &m * &x;
        let solved = solve_hpd_vec(&m, &b).unwrap();
        assert!((solved - x).norm() < 1e-12);
    }
}
