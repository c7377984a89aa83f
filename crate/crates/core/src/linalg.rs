//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{GapError, Result};

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

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Each eigenvector is signed so that its first entry
/// with magnitude above 1e-12 is positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[j];
        let mut v = eig.eigenvectors.column(j).into_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        vectors.set_column(k, &v);
    }
    (values, vectors)
}

/// Inverse of a symmetric positive (semi)definite matrix. Uses Cholesky and
/// falls back to the eigenvalue pseudo-inverse when the matrix is singular.
pub fn spd_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        return inv;
    }
    pinv_sym(m)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
pub fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let maxabs = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = maxabs * 1e-12 * m.nrows().max(1) as f64;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam.abs() > tol {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    out
}

/// Solves `gram * x = rhs` for a symmetric positive definite Gram matrix,
/// erroring if the matrix is numerically singular.
pub fn solve_gram(gram: &DMatrix<f64>, rhs: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (vals, _) = sym_eigen_desc(gram);
    let n = vals.len();
    if n == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    let top = vals[0];
    if !(top > 0.0) || vals[n - 1] <= top * 1e-13 {
        return Err(GapError::Singular(what.to_string()));
    }
    let ch = gram
        .clone()
        .cholesky()
        .ok_or_else(|| GapError::Singular(what.to_string()))?;
    Ok(ch.solve(rhs))
}

/// Ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub resid: DVector<f64>,
    /// (X'X)^{-1}
    pub xtx_inv: DMatrix<f64>,
}

/// OLS of `y` on the columns of `x`; errors on (near-)collinear regressors.
pub fn ols(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<OlsFit> {
    if y.len() != x.nrows() {
        return Err(GapError::invalid("ols: dimension mismatch"));
    }
    if x.nrows() < x.ncols() {
        return Err(GapError::invalid("ols: fewer observations than regressors"));
    }
    // Scale columns before the collinearity check so units do not matter.
    let k = x.ncols();
    let mut scale = DVector::from_element(k, 1.0);
    for j in 0..k {
        let nrm = x.column(j).norm();
        if nrm == 0.0 {
            return Err(GapError::Singular("ols: zero regressor".into()));
        }
        scale[j] = nrm;
    }
    let mut xs = x.clone();
    for j in 0..k {
        xs.column_mut(j).scale_mut(1.0 / scale[j]);
    }
    let gram = xs.transpose() * &xs;
    let (vals, _) = sym_eigen_desc(&gram);
    if vals[k - 1] <= vals[0] * 1e-12 {
        return Err(GapError::Singular("ols: collinear regressors".into()));
    }
    let gram_inv_s = spd_inverse(&gram);
    let coef_s = &gram_inv_s * (xs.transpose() * y);
    let mut coef = coef_s.clone();
    let mut xtx_inv = gram_inv_s;
    for i in 0..k {
        coef[i] /= scale[i];
        for j in 0..k {
            xtx_inv[(i, j)] /= scale[i] * scale[j];
        }
    }
    let resid = y - x * &coef;
    Ok(OlsFit { coef, resid, xtx_inv })
}

/// Solution of the discrete Lyapunov equation `P = A P A' + Q` by doubling.
/// If the spectral radius of `A` exceeds `max_radius`, `A` is first scaled
/// down to that radius so that a finite solution exists.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>, max_radius: f64) -> DMatrix<f64> {
    let rho = spectral_radius(a);
    let mut ak = if rho > max_radius {
        a * (max_radius / rho)
    } else {
        a.clone()
    };
    let mut p = q.clone();
    for _ in 0..200 {
        let next = &p + &ak * &p * ak.transpose();
        let diff = (&next - &p).amax();
        p = next;
        ak = &ak * &ak;
        if diff <= 1e-14 * p.amax().max(1e-300) {
            break;
        }
    }
    symmetrize(&mut p);
    p
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Log-determinant of a symmetric positive definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    let ch = m.clone().cholesky()?;
    let l = ch.l_dirty();
    Some((0..m.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with divisor n-1.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}
