//! Statistical utilities: HAC variances, unit-root tests, distribution
//! helpers and derivative-free optimizers.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{GapError, Result};
use crate::linalg::{ols, OlsFit};

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Two-sided p-value of a Student-t statistic.
pub fn t_two_sided_pvalue(stat: f64, df: f64) -> f64 {
    let t = StudentsT::new(0.0, 1.0, df).unwrap();
    2.0 * (1.0 - t.cdf(stat.abs()))
}

/// Bartlett-kernel long-run variance of a series around its own mean.
pub fn long_run_variance(x: &[f64], lags: usize) -> f64 {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let u: Vec<f64> = x.iter().map(|v| v - m).collect();
    let gamma = |l: usize| -> f64 { (l..n).map(|t| u[t] * u[t - l]).sum::<f64>() / n as f64 };
    let mut s = gamma(0);
    for l in 1..=lags.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        s += 2.0 * w * gamma(l);
    }
    s
}

/// Newey-West covariance of OLS coefficients with Bartlett weights.
pub fn hac_covariance(x: &DMatrix<f64>, resid: &DVector<f64>, xtx_inv: &DMatrix<f64>, lags: usize) -> DMatrix<f64> {
    let n = x.nrows();
    let k = x.ncols();
    let scores: Vec<DVector<f64>> = (0..n)
        .map(|t| x.row(t).transpose() * resid[t])
        .collect();
    let mut s = DMatrix::zeros(k, k);
    for g in &scores {
        s += g * g.transpose();
    }
    for l in 1..=lags.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let mut gl = DMatrix::zeros(k, k);
        for t in l..n {
            gl += &scores[t] * scores[t - l].transpose();
        }
        s += (&gl + gl.transpose()) * w;
    }
    xtx_inv * s * xtx_inv
}

/// OLS estimates with Newey-West standard errors.
#[derive(Debug, Clone)]
pub struct HacRegression {
    pub coef: DVector<f64>,
    pub se: DVector<f64>,
    pub resid: DVector<f64>,
    pub nobs: usize,
}

pub fn ols_hac(y: &DVector<f64>, x: &DMatrix<f64>, lags: usize) -> Result<HacRegression> {
    let OlsFit { coef, resid, xtx_inv } = ols(y, x)?;
    let cov = hac_covariance(x, &resid, &xtx_inv, lags);
    let se = DVector::from_fn(coef.len(), |i, _| cov[(i, i)].max(0.0).sqrt());
    Ok(HacRegression { coef, se, resid, nobs: y.len() })
}

/// Augmented Dickey-Fuller test with intercept.
#[derive(Debug, Clone)]
pub struct AdfResult {
    pub stat: f64,
    pub lags: usize,
    pub crit_5pct: f64,
    pub nobs: usize,
}

/// ADF regression `dy_t = a + rho*y_{t-1} + sum_j phi_j dy_{t-j}` with the lag
/// order picked by BIC over `0..=max_lag` on a common sample.
pub fn adf_test(y: &[f64], max_lag: usize) -> Result<AdfResult> {
    let n = y.len();
    if n < max_lag + 10 {
        return Err(GapError::invalid("adf: series too short"));
    }
    let first = y[0];
    if y.iter().all(|v| (v - first).abs() == 0.0) {
        return Err(GapError::invalid("adf: constant series"));
    }
    let dy: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
    // dy[t-1] = y[t] - y[t-1]; regression rows t = max_lag+1 .. n-1
    let start = max_lag + 1;
    let rows = n - start;
    let build = |k: usize| -> (DVector<f64>, DMatrix<f64>) {
        let yv = DVector::from_fn(rows, |r, _| dy[start + r - 1]);
        let x = DMatrix::from_fn(rows, 2 + k, |r, c| {
            let t = start + r;
            match c {
                0 => 1.0,
                1 => y[t - 1],
                j => dy[t - 1 - (j - 1)],
            }
        });
        (yv, x)
    };
    let mut best: Option<(f64, usize)> = None;
    for k in 0..=max_lag {
        let (yv, x) = build(k);
        let fit = match ols(&yv, &x) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let rss = fit.resid.norm_squared().max(1e-300);
        let bic = rows as f64 * (rss / rows as f64).ln() + (2 + k) as f64 * (rows as f64).ln();
        if best.map_or(true, |(b, _)| bic < b) {
            best = Some((bic, k));
        }
    }
    let (_, k) = best.ok_or_else(|| GapError::Singular("adf regression".into()))?;
    let (yv, x) = build(k);
    let fit = ols(&yv, &x)?;
    let dof = (rows - (2 + k)) as f64;
    let s2 = fit.resid.norm_squared() / dof;
    let se = (s2 * fit.xtx_inv[(1, 1)]).sqrt();
    let stat = if se > 0.0 { fit.coef[1] / se } else { f64::NEG_INFINITY };
    let tn = rows as f64;
    let crit_5pct = -2.8621 - 2.738 / tn - 8.36 / (tn * tn);
    Ok(AdfResult { stat, lags: k, crit_5pct, nobs: rows })
}

/// Golden-section minimization of a scalar function on `[a, b]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - gr * (b - a);
    let mut d = a + gr * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - gr * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + gr * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Nelder-Mead simplex minimization.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if x[i].abs() > 1e-8 { step * x[i].abs().max(0.1) } else { step };
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    for _ in 0..max_iter {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        values = idx.iter().map(|&i| values[i]).collect();
        if (values[n] - values[0]).abs() <= tol * (values[0].abs() + tol) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let t = if fr < values[n] { -0.5 } else { 0.5 };
            let xc = along(t);
            let fc = f(&xc);
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let xi: Vec<f64> = (0..n)
                        .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                        .collect();
                    values[i] = f(&xi);
                    simplex[i] = xi;
                }
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap();
    (simplex[best].clone(), values[best])
}
