//! Univariate trend-cycle filters used as comparison benchmarks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::linalg::ols;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterMethod {
    Hp,
    BoostedHp,
    Hamilton,
    ChristianoFitzgerald,
    Butterworth,
}

impl FromStr for FilterMethod {
    type Err = GapError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hp" => Ok(FilterMethod::Hp),
            "bhp" => Ok(FilterMethod::BoostedHp),
            "hamilton" => Ok(FilterMethod::Hamilton),
            "cf" => Ok(FilterMethod::ChristianoFitzgerald),
            "bt" => Ok(FilterMethod::Butterworth),
            _ => Err(GapError::invalid(format!("unknown filter '{s}' (hp, bhp, hamilton, cf, bt)"))),
        }
    }
}

impl fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMethod::Hp => "hp",
            FilterMethod::BoostedHp => "bhp",
            FilterMethod::Hamilton => "hamilton",
            FilterMethod::ChristianoFitzgerald => "cf",
            FilterMethod::Butterworth => "bt",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterResult {
    pub method: FilterMethod,
    pub params: Vec<(String, f64)>,
    /// Undefined dates are NaN.
    pub trend: Vec<f64>,
    pub cycle: Vec<f64>,
}

fn check_finite(y: &[f64]) -> Result<()> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GapError::invalid("filter input contains non-finite values"));
    }
    Ok(())
}

/// Solves `(I + lambda D'D) x = b` for the second-difference operator `D`
/// by a banded Cholesky factorization.
fn hp_solve(b: &[f64], lambda: f64) -> Vec<f64> {
    let n = b.len();
    // bands of I + lambda D'D
    let mut a0 = vec![1.0; n];
    let mut a1 = vec![0.0; n];
    let mut a2 = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let w = [1.0, -2.0, 1.0];
        for r in 0..3 {
            a0[k + r] += lambda * w[r] * w[r];
        }
        a1[k] += lambda * w[0] * w[1];
        a1[k + 1] += lambda * w[1] * w[2];
        a2[k] += lambda * w[0] * w[2];
    }
    let mut d = vec![0.0; n];
    let mut e1 = vec![0.0; n];
    let mut e2 = vec![0.0; n];
    for i in 0..n {
        let mut v = a0[i];
        if i >= 1 {
            v -= e1[i - 1] * e1[i - 1];
        }
        if i >= 2 {
            v -= e2[i - 2] * e2[i - 2];
        }
        d[i] = v.sqrt();
        if i + 1 < n {
            let mut w = a1[i];
            if i >= 1 {
                w -= e2[i - 1] * e1[i - 1];
            }
            e1[i] = w / d[i];
        }
        if i + 2 < n {
            e2[i] = a2[i] / d[i];
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        if i >= 1 {
            v -= e1[i - 1] * z[i - 1];
        }
        if i >= 2 {
            v -= e2[i - 2] * z[i - 2];
        }
        z[i] = v / d[i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = z[i];
        if i + 1 < n {
            v -= e1[i] * x[i + 1];
        }
        if i + 2 < n {
            v -= e2[i] * x[i + 2];
        }
        x[i] = v / d[i];
    }
    x
}

/// Hodrick-Prescott filter.
pub fn hp_filter(y: &[f64], lambda: f64) -> Result<FilterResult> {
    if y.len() < 4 {
        return Err(GapError::invalid("HP filter needs at least 4 observations"));
    }
    check_finite(y)?;
    if !(lambda >= 0.0) {
        return Err(GapError::invalid("HP smoothing parameter must be non-negative"));
    }
    let trend = hp_solve(y, lambda);
    let cycle = y.iter().zip(&trend).map(|(a, b)| a - b).collect();
    Ok(FilterResult { method: FilterMethod::Hp, params: vec![("lambda".into(), lambda)], trend, cycle })
}

/// Eigenvalues of the HP smoother matrix `(I + lambda D'D)^{-1}`.
fn hp_smoother_eigenvalues(n: usize, lambda: f64) -> Vec<f64> {
    let mut dd: DMatrix<f64> = DMatrix::zeros(n, n);
    for k in 0..n.saturating_sub(2) {
        let w = [1.0, -2.0, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                dd[(k + r, k + c)] += w[r] * w[c];
            }
        }
    }
    dd.symmetric_eigenvalues().iter().map(|&e| 1.0 / (1.0 + lambda * e.max(0.0))).collect()
}

/// Boosted HP filter: repeated HP passes on the remaining cycle, stopped at
/// the first increase of the BIC-type criterion or after `max_iter` passes.
pub fn boosted_hp(y: &[f64], lambda: f64, max_iter: usize) -> Result<FilterResult> {
    let first = hp_filter(y, lambda)?;
    if max_iter <= 1 {
        let mut r = first;
        r.method = FilterMethod::BoostedHp;
        r.params.push(("iterations".into(), 1.0));
        return Ok(r);
    }
    let n = y.len();
    let eig = hp_smoother_eigenvalues(n, lambda);
    let tr_is: f64 = eig.iter().map(|s| 1.0 - s).sum();
    let c1: f64 = first.cycle.iter().map(|v| v * v).sum();
    let criterion = |m: usize, cycle: &[f64]| -> f64 {
        let cc: f64 = cycle.iter().map(|v| v * v).sum();
        let tr_b: f64 = eig.iter().map(|s| 1.0 - (1.0 - s).powi(m as i32)).sum();
        let fit = if c1 > 0.0 { cc / c1 } else { 0.0 };
        fit + (n as f64).ln() * tr_b / tr_is
    };
    let mut trend = first.trend.clone();
    let mut cycle = first.cycle.clone();
    let mut best = criterion(1, &cycle);
    let mut m = 1;
    while m < max_iter {
        let pass = hp_solve(&cycle, lambda);
        let next_cycle: Vec<f64> = cycle.iter().zip(&pass).map(|(c, p)| c - p).collect();
        let ic = criterion(m + 1, &next_cycle);
        if ic > best {
            break;
        }
        for (t, p) in trend.iter_mut().zip(&pass) {
            *t += p;
        }
        cycle = next_cycle;
        best = ic;
        m += 1;
    }
    Ok(FilterResult {
        method: FilterMethod::BoostedHp,
        params: vec![("lambda".into(), lambda), ("iterations".into(), m as f64)],
        trend,
        cycle,
    })
}

/// Hamilton regression filter: `y_{t+h}` on a constant and
/// `y_t, ..., y_{t-p+1}`. The first `h + p - 1` dates are undefined.
pub fn hamilton_filter(y: &[f64], h: usize, p: usize) -> Result<FilterResult> {
    let n = y.len();
    if p == 0 || h == 0 {
        return Err(GapError::invalid("Hamilton filter needs positive horizon and lags"));
    }
    if n < h + p + 10 {
        return Err(GapError::invalid(format!("Hamilton filter needs at least {} observations", h + p + 10)));
    }
    check_finite(y)?;
    let first = h + p - 1;
    let rows = n - first;
    let target = DVector::from_fn(rows, |r, _| y[first + r]);
    let x = DMatrix::from_fn(rows, p + 1, |r, j| if j == 0 { 1.0 } else { y[first + r - h - (j - 1)] });
    let fit = ols(&target, &x)?;
    let mut trend = vec![f64::NAN; n];
    let mut cycle = vec![f64::NAN; n];
    for r in 0..rows {
        cycle[first + r] = fit.resid[r];
        trend[first + r] = y[first + r] - fit.resid[r];
    }
    Ok(FilterResult {
        method: FilterMethod::Hamilton,
        params: vec![("h".into(), h as f64), ("p".into(), p as f64)],
        trend,
        cycle,
    })
}

/// Asymmetric full-sample Christiano-Fitzgerald band-pass filter under a
/// random walk with drift. The cycle is the band-pass output for periods
/// between `low` and `high`.
pub fn cf_filter(y: &[f64], low: f64, high: f64) -> Result<FilterResult> {
    let n = y.len();
    if n < 16 {
        return Err(GapError::invalid("CF filter needs at least 16 observations"));
    }
    check_finite(y)?;
    if !(low >= 2.0 && high > low) {
        return Err(GapError::invalid("CF filter needs 2 <= low < high"));
    }
    let drift = (y[n - 1] - y[0]) / (n - 1) as f64;
    let x: Vec<f64> = y.iter().enumerate().map(|(t, v)| v - t as f64 * drift).collect();
    let a = 2.0 * std::f64::consts::PI / high;
    let b = 2.0 * std::f64::consts::PI / low;
    let mut bj = vec![(b - a) / std::f64::consts::PI; n + 1];
    for (j, w) in bj.iter_mut().enumerate().skip(1) {
        let jf = j as f64;
        *w = ((b * jf).sin() - (a * jf).sin()) / (std::f64::consts::PI * jf);
    }
    // prefix[k] = sum of bj[1..k]
    let mut prefix = vec![0.0; n + 2];
    for k in 1..=n {
        prefix[k + 1] = prefix[k] + bj[k];
    }
    let sum_1_to = |k: usize| prefix[k.min(n + 1)];
    let mut cycle = vec![0.0; n];
    for i in 0..n {
        let up = n.saturating_sub(i + 2);
        let down = i.saturating_sub(1);
        let s_up = sum_1_to(up + 1);
        let s_down = sum_1_to(down + 1);
        let bb = -0.5 * bj[0] - s_up;
        let aa = -bj[0] - s_up - s_down - bb;
        let mut v = bj[0] * x[i] + bb * x[n - 1] + aa * x[0];
        for j in 1..=up {
            v += bj[j] * x[i + j];
        }
        for j in 1..=down {
            v += bj[j] * x[i - j];
        }
        cycle[i] = v;
    }
    let trend = y.iter().zip(&cycle).map(|(a, c)| a - c).collect();
    Ok(FilterResult {
        method: FilterMethod::ChristianoFitzgerald,
        params: vec![("low".into(), low), ("high".into(), high)],
        trend,
        cycle,
    })
}

/// Squared gain of the Butterworth low-pass filter.
pub fn butterworth_gain(omega: f64, order: u32, cutoff: f64, g0: f64) -> f64 {
    let r = (omega / 2.0).tan() / (cutoff / 2.0).tan();
    g0 / (1.0 + r.abs().powi(2 * order as i32))
}

/// Two-sided Butterworth low-pass filter applied in the frequency domain
/// after symmetric reflection padding of length T on each side. The trend
/// has squared gain [`butterworth_gain`]; the cycle is the remainder.
pub fn butterworth_filter(y: &[f64], order: u32, cutoff: f64, g0: f64) -> Result<FilterResult> {
    let n = y.len();
    if n < 16 {
        return Err(GapError::invalid("Butterworth filter needs at least 16 observations"));
    }
    check_finite(y)?;
    if !(cutoff > 0.0 && cutoff < std::f64::consts::PI) {
        return Err(GapError::invalid("Butterworth cutoff must lie in (0, pi)"));
    }
    if order == 0 || !(g0 >= 0.0) {
        return Err(GapError::invalid("Butterworth order must be positive and scale non-negative"));
    }
    let len = 3 * n;
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|k| {
            let v = if k < n {
                y[n - 1 - k]
            } else if k < 2 * n {
                y[k - n]
            } else {
                y[3 * n - 1 - k]
            };
            Complex::new(v, 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = k.min(len - k);
        let omega = 2.0 * std::f64::consts::PI * kk as f64 / len as f64;
        *c *= butterworth_gain(omega, order, cutoff, g0).sqrt();
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let trend: Vec<f64> = (0..n).map(|t| buf[n + t].re / len as f64).collect();
    let cycle = y.iter().zip(&trend).map(|(a, b)| a - b).collect();
    Ok(FilterResult {
        method: FilterMethod::Butterworth,
        params: vec![("order".into(), order as f64), ("cutoff".into(), cutoff), ("g0".into(), g0)],
        trend,
        cycle,
    })
}

/// Parameters for [`apply_filter`] with the benchmark defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterParams {
    pub lambda: f64,
    pub max_iter: usize,
    pub h: usize,
    pub p: usize,
    pub low: f64,
    pub high: f64,
    pub order: u32,
    pub cutoff: f64,
    pub g0: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { lambda: 1600.0, max_iter: 100, h: 8, p: 4, low: 8.0, high: 32.0, order: 1, cutoff: 0.04, g0: 1.0 }
    }
}

impl FilterParams {
    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let bad = || GapError::invalid(format!("bad filter parameter value '{v}' for '{key}'"));
        match key {
            "lambda" => self.lambda = v.parse().map_err(|_| bad())?,
            "max_iter" => self.max_iter = v.parse().map_err(|_| bad())?,
            "h" => self.h = v.parse().map_err(|_| bad())?,
            "p" => self.p = v.parse().map_err(|_| bad())?,
            "low" => self.low = v.parse().map_err(|_| bad())?,
            "high" => self.high = v.parse().map_err(|_| bad())?,
            "order" => self.order = v.parse().map_err(|_| bad())?,
            "cutoff" => self.cutoff = v.parse().map_err(|_| bad())?,
            "g0" => self.g0 = v.parse().map_err(|_| bad())?,
            _ => return Err(GapError::invalid(format!("unknown filter parameter '{key}'"))),
        }
        Ok(())
    }
}

pub fn apply_filter(method: FilterMethod, y: &[f64], par: &FilterParams) -> Result<FilterResult> {
    match method {
        FilterMethod::Hp => hp_filter(y, par.lambda),
        FilterMethod::BoostedHp => boosted_hp(y, par.lambda, par.max_iter),
        FilterMethod::Hamilton => hamilton_filter(y, par.h, par.p),
        FilterMethod::ChristianoFitzgerald => cf_filter(y, par.low, par.high),
        FilterMethod::Butterworth => butterworth_filter(y, par.order, par.cutoff, par.g0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hp_keeps_lines() {
        let y: Vec<f64> = (0..30).map(|t| 2.0 + 0.5 * t as f64).collect();
        let r = hp_filter(&y, 1600.0).unwrap();
        assert!(r.cycle.iter().all(|c| c.abs() < 1e-8));
    }

    #[test]
    fn hp_zero_lambda_is_identity() {
        let y = [1.0, 3.0, -2.0, 5.0, 0.5];
        let r = hp_filter(&y, 0.0).unwrap();
        assert_eq!(r.trend, y.to_vec());
    }

    #[test]
    fn butterworth_rejects_bad_cutoff() {
        let y = vec![0.0; 20];
        assert!(butterworth_filter(&y, 1, 4.0, 1.0).is_err());
    }

    #[test]
    fn cf_constant_has_no_cycle() {
        let y = vec![3.0; 40];
        let r = cf_filter(&y, 8.0, 32.0).unwrap();
        assert!(r.cycle.iter().all(|c| c.abs() < 1e-10));
    }
}
