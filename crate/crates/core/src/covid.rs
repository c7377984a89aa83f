//! Covid adjustment: window factor, post-break volatility path and purge.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dates::Quarter;
use crate::dfm::{e_step, DfmParams, TransitionMoments};
use crate::error::{GapError, Result};
use crate::linalg::{log_det_spd, sym_eigen_desc};
use crate::statespace::SmootherOutput;
use crate::stats::{golden_section, nelder_mead};

pub const S_MIN: f64 = 0.1;
pub const S_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovidMode {
    /// Window factor from the partitioned n x n covariance, free volatility path.
    Benchmark,
    /// Window factor from the T^C x T^C covariance.
    AltFactor,
    /// Two-parameter exponentially decaying volatility.
    ExpDecay,
    /// Pre-break parameters with truncated-smoother states.
    Frozen2019,
    /// No adjustment; plain full-sample EM.
    None,
}

impl FromStr for CovidMode {
    type Err = GapError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benchmark" => Ok(CovidMode::Benchmark),
            "alt-factor" | "alt_factor" => Ok(CovidMode::AltFactor),
            "exp-decay" | "exp_decay" => Ok(CovidMode::ExpDecay),
            "frozen-2019" | "frozen_2019" | "frozen" => Ok(CovidMode::Frozen2019),
            "none" => Ok(CovidMode::None),
            other => Err(GapError::invalid(format!("unknown covid mode '{other}'"))),
        }
    }
}

impl fmt::Display for CovidMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CovidMode::Benchmark => "benchmark",
            CovidMode::AltFactor => "alt-factor",
            CovidMode::ExpDecay => "exp-decay",
            CovidMode::Frozen2019 => "frozen-2019",
            CovidMode::None => "none",
        };
        f.write_str(s)
    }
}

/// Exponent on `s_t` in the concentrated likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolExponent {
    /// Dimension of the factor vector.
    Factors,
    /// Number of series in the panel.
    Series,
}

impl FromStr for VolExponent {
    type Err = GapError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "q" => Ok(VolExponent::Factors),
            "n" => Ok(VolExponent::Series),
            other => Err(GapError::invalid(format!("volatility exponent must be q or n, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovidAdjust {
    pub mode: CovidMode,
    pub window: Option<(Quarter, Quarter)>,
    /// Covid factor over the whole sample (zero outside the window).
    pub g: Vec<f64>,
    pub gamma: DVector<f64>,
    /// Volatility path over the whole sample (one before the break).
    pub s: Vec<f64>,
    /// Row of the first period with a free volatility parameter.
    pub regime_start: Option<usize>,
    /// `(s_bar, rho)` of the exponential-decay variant.
    pub decay: Option<(f64, f64)>,
    /// Some volatility parameter sits on its search bound.
    pub bound_hit: bool,
}

impl CovidAdjust {
    /// No Covid factor and unit volatility.
    pub fn identity(n: usize, tn: usize, mode: CovidMode) -> Self {
        CovidAdjust {
            mode,
            window: None,
            g: vec![0.0; tn],
            gamma: DVector::zeros(n),
            s: vec![1.0; tn],
            regime_start: None,
            decay: None,
            bound_hit: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.g.iter().all(|v| *v == 0.0) && self.s.iter().all(|v| *v == 1.0)
    }
}

/// Idiosyncratic components `y - Lambda f - D` from the truncated smoother
/// at pre-break parameters. Also returns the smoother.
pub fn extract_covid_idiosyncratic(y: &DMatrix<f64>, params: &DfmParams, breakpoint: usize) -> Result<(DMatrix<f64>, SmootherOutput)> {
    let (_, sm) = e_step(params, y, &[], Some(breakpoint))?;
    let (tn, n) = y.shape();
    let lay = params.layout();
    let q = params.q;
    let mut xi = DMatrix::from_element(tn, n, f64::NAN);
    for t in 0..tn {
        let a = &sm.a_smooth[t + 1];
        for i in 0..n {
            if !y[(t, i)].is_finite() {
                continue;
            }
            let mut v = y[(t, i)] - params.deterministic(i, t);
            for j in 0..q {
                v -= params.lambda[(i, j)] * a[j];
            }
            if let Some(k) = lay.level[i] {
                v -= a[k];
            }
            xi[(t, i)] = v;
        }
    }
    Ok((xi, sm))
}

fn window_block(idio: &DMatrix<f64>, rows: std::ops::Range<usize>) -> Result<DMatrix<f64>> {
    if rows.end > idio.nrows() || rows.len() < 2 {
        return Err(GapError::invalid("covid window must hold at least two in-sample periods"));
    }
    let n = idio.ncols();
    for t in rows.clone() {
        if (0..n).all(|i| !idio[(t, i)].is_finite()) {
            return Err(GapError::data(format!("covid window row {t} has no observations")));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), n, |r, i| {
        let v = idio[(rows.start + r, i)];
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }))
}

/// Least-squares loadings of each window column on `g`, with the sign
/// fixed so that the largest-magnitude loading is positive.
fn loadings_on(xi: &DMatrix<f64>, observed: &DMatrix<bool>, g: &mut [f64]) -> DVector<f64> {
    let (tc, n) = xi.shape();
    let mut gamma = DVector::from_fn(n, |i, _| {
        let mut num = 0.0;
        let mut den = 0.0;
        for t in 0..tc {
            if observed[(t, i)] {
                num += xi[(t, i)] * g[t];
                den += g[t] * g[t];
            }
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    });
    let lead = gamma.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
    if lead < 0.0 {
        gamma.neg_mut();
        g.iter_mut().for_each(|v| *v = -*v);
    }
    gamma
}

/// Covid factor and loadings from the partitioned covariance of window
/// idiosyncratic components. Returns `g` over the window rows.
pub fn estimate_covid_factor(idio: &DMatrix<f64>, unit_root: &[bool], window: std::ops::Range<usize>) -> Result<(Vec<f64>, DVector<f64>)> {
    let xi = window_block(idio, window.clone())?;
    let observed = DMatrix::from_fn(xi.nrows(), xi.ncols(), |r, i| idio[(window.start + r, i)].is_finite());
    let (tc, n) = xi.shape();
    let tcf = tc as f64;
    let w = DVector::from_fn(n, |i, _| if unit_root[i] { 1.0 / tcf } else { 1.0 / tcf.sqrt() });
    let gram = xi.transpose() * &xi;
    let cov = DMatrix::from_fn(n, n, |i, j| gram[(i, j)] * w[i] * w[j]);
    let (_, vecs) = sym_eigen_desc(&cov);
    let v = vecs.column(0).into_owned();
    let mut g: Vec<f64> = (&xi * &v / (n as f64).sqrt()).iter().copied().collect();
    let gamma = loadings_on(&xi, &observed, &mut g);
    Ok((g, gamma))
}

/// Alternative estimator: principal component of the T^C x T^C covariance,
/// with unit-root columns first-differenced.
pub fn estimate_covid_factor_alt(idio: &DMatrix<f64>, unit_root: &[bool], window: std::ops::Range<usize>) -> Result<(Vec<f64>, DVector<f64>)> {
    let xi = window_block(idio, window.clone())?;
    let observed = DMatrix::from_fn(xi.nrows(), xi.ncols(), |r, i| idio[(window.start + r, i)].is_finite());
    let (tc, n) = xi.shape();
    let mut xd = xi.clone();
    for i in 0..n {
        if !unit_root[i] {
            continue;
        }
        for r in 0..tc {
            let t = window.start + r;
            let prev = if t > 0 { idio[(t - 1, i)] } else { f64::NAN };
            let cur = idio[(t, i)];
            xd[(r, i)] = if cur.is_finite() && prev.is_finite() { cur - prev } else { 0.0 };
        }
    }
    let cov = &xd * xd.transpose() / n as f64;
    let (_, vecs) = sym_eigen_desc(&cov);
    let mut g: Vec<f64> = vecs.column(0).iter().map(|v| v * (tc as f64).sqrt()).collect();
    let gamma = loadings_on(&xi, &observed, &mut g);
    Ok((g, gamma))
}

/// Concentrated log-likelihood of the factor transitions as a function of
/// the volatility path (`s` indexed by row, one entry per period).
pub fn concentrated_loglik(mom: &TransitionMoments, s: &[f64], exponent: f64) -> f64 {
    let tn = mom.ff.len() as f64;
    let (sigma_ok, sigma) = match mom.var_update(s) {
        Ok((_, sig)) => (true, sig),
        Err(_) => (false, DMatrix::zeros(0, 0)),
    };
    if !sigma_ok {
        return f64::NEG_INFINITY;
    }
    let ld = match log_det_spd(&sigma) {
        Some(v) => v,
        None => return f64::NEG_INFINITY,
    };
    let sum_log_s: f64 = s.iter().map(|v| v.ln()).sum();
    -exponent * sum_log_s - 0.5 * tn * ld
}

#[derive(Debug, Clone)]
pub struct VolatilityFit {
    pub s: Vec<f64>,
    pub loglik: f64,
    pub bound_hit: bool,
}

fn exponent_value(exp: VolExponent, q: usize, n: usize) -> f64 {
    match exp {
        VolExponent::Factors => q as f64,
        VolExponent::Series => n as f64,
    }
}

/// Free volatility path from `regime_start` onwards by coordinate-wise
/// golden-section search on `log s_t`, restarted from `s = 1` and `s = 3`.
pub fn estimate_covid_volatility(mom: &TransitionMoments, regime_start: usize, exponent: VolExponent, n: usize) -> Result<VolatilityFit> {
    let tn = mom.ff.len();
    if regime_start >= tn {
        return Err(GapError::invalid("volatility regime starts after the sample"));
    }
    let q = mom.ff[0].nrows();
    let k = exponent_value(exponent, q, n);
    let (lo, hi) = (S_MIN.ln(), S_MAX.ln());
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in [1.0f64, 3.0] {
        let mut s = vec![1.0; tn];
        s[regime_start..].iter_mut().for_each(|v| *v = start);
        let mut current = concentrated_loglik(mom, &s, k);
        for _sweep in 0..100 {
            let before = current;
            for t in regime_start..tn {
                let mut trial = s.clone();
                let (x, fx) = golden_section(
                    |x| {
                        trial[t] = x.exp();
                        -concentrated_loglik(mom, &trial, k)
                    },
                    lo,
                    hi,
                    1e-6,
                );
                if -fx >= current {
                    s[t] = x.exp();
                    current = -fx;
                }
            }
            if (current - before).abs() <= 1e-9 * (1.0 + current.abs()) {
                break;
            }
        }
        if best.as_ref().map_or(true, |(_, l)| current > *l) {
            best = Some((s, current));
        }
    }
    let (s, loglik) = best.expect("at least one start");
    if !loglik.is_finite() {
        return Err(GapError::Numerical("concentrated likelihood is not finite".into()));
    }
    let bound_hit = s[regime_start..].iter().any(|v| *v <= S_MIN * 1.001 || *v >= S_MAX * 0.999);
    Ok(VolatilityFit { s, loglik, bound_hit })
}

#[derive(Debug, Clone)]
pub struct DecayFit {
    pub s: Vec<f64>,
    pub s_bar: f64,
    pub rho: f64,
    pub loglik: f64,
    /// False when `s_bar` is so close to one that `rho` is not identified.
    pub identified: bool,
}

pub fn decay_path(tn: usize, regime_start: usize, s_bar: f64, rho: f64) -> Vec<f64> {
    (0..tn)
        .map(|t| if t < regime_start { 1.0 } else { 1.0 + (s_bar - 1.0) * rho.powi((t - regime_start) as i32) })
        .collect()
}

/// Exponential-decay volatility `s_t = 1 + (s_bar - 1) rho^(t - t0)`.
pub fn estimate_covid_volatility_expdecay(mom: &TransitionMoments, regime_start: usize, exponent: VolExponent, n: usize) -> Result<DecayFit> {
    let tn = mom.ff.len();
    if regime_start >= tn {
        return Err(GapError::invalid("volatility regime starts after the sample"));
    }
    let q = mom.ff[0].nrows();
    let k = exponent_value(exponent, q, n);
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let unpack = |x: &[f64]| (S_MIN + (S_MAX - S_MIN) * logistic(x[0]), 0.999 * logistic(x[1]));
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let mut best: Option<(f64, f64, f64)> = None;
    for (sb, rho) in [(3.0, 0.8), (1.5, 0.5), (6.0, 0.9), (0.7, 0.5)] {
        let x0 = [logit((sb - S_MIN) / (S_MAX - S_MIN)), logit(rho / 0.999)];
        let (x, fx) = nelder_mead(
            |x| {
                let (sb, rho) = unpack(x);
                -concentrated_loglik(mom, &decay_path(tn, regime_start, sb, rho), k)
            },
            &x0,
            0.5,
            1e-12,
            2000,
        );
        let (sb, rho) = unpack(&x);
        if best.map_or(true, |(_, _, l)| -fx > l) {
            best = Some((sb, rho, -fx));
        }
    }
    let (s_bar, rho, loglik) = best.expect("at least one start");
    if !loglik.is_finite() {
        return Err(GapError::Numerical("concentrated likelihood is not finite".into()));
    }
    Ok(DecayFit {
        s: decay_path(tn, regime_start, s_bar, rho),
        s_bar,
        rho,
        loglik,
        identified: (s_bar - 1.0).abs() > 0.05,
    })
}

/// Data net of the Covid component.
pub fn purge_covid(y: &DMatrix<f64>, adj: &CovidAdjust) -> DMatrix<f64> {
    let (tn, n) = y.shape();
    DMatrix::from_fn(tn, n, |t, i| y[(t, i)] - adj.gamma[i] * adj.g.get(t).copied().unwrap_or(0.0))
}
