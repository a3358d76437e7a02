use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::TunerError;

/// Symmetrizes and clips negative eigenvalues to zero.
pub fn psd_repair(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Lower Cholesky factor, retrying with `1e-10 I`, `1e-9 I`, `1e-8 I` added.
pub fn jittered_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>, TunerError> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = Cholesky::<f64, Dyn>::new(sym.clone()) {
        return Ok(c.l());
    }
    let n = sym.nrows();
    let mut jitter = 1e-10;
    for _ in 0..3 {
        let shifted = &sym + DMatrix::identity(n, n) * jitter;
        if let Some(c) = Cholesky::<f64, Dyn>::new(shifted) {
            return Ok(c.l());
        }
        jitter *= 10.0;
    }
    Err(TunerError::Cholesky)
}

/// Inverse of a symmetric positive matrix, with a `1e-10 I` jitter when it is
/// ill-conditioned.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, TunerError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    let n = sym.nrows();
    let conditioned = if max == 0.0 || min == 0.0 || max / min > 1e12 {
        sym + DMatrix::identity(n, n) * 1e-10
    } else {
        sym
    };
    conditioned.try_inverse().filter(|inv| inv.iter().all(|v| v.is_finite())).ok_or(TunerError::SingularInnovation)
}
