//! Common trend extraction, potential output and output gap.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dfm::{doz_criterion, DfmFit, EmOptions};
use crate::error::{GapError, Result};
use crate::linalg::{discrete_lyapunov, symmetrize, variance};
use crate::statespace::{filter_and_smooth, kalman_filter, SmootherOutput, StateSpaceModel};
use crate::stats::nelder_mead;

const VAR_FLOOR: f64 = 1e-10;

/// Share of the standardized spectral density of `x` over `|w| <= cutoff`,
/// using a Bartlett lag window with `M = floor(sqrt(T))`.
pub fn low_frequency_share(x: &[f64], cutoff: f64) -> Result<f64> {
    let n = x.len();
    if n < 3 {
        return Err(GapError::invalid("spectral share needs at least three points"));
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let u: Vec<f64> = x.iter().map(|v| v - m).collect();
    let gamma = |k: usize| (k..n).map(|t| u[t] * u[t - k]).sum::<f64>() / n as f64;
    let g0 = gamma(0);
    if !(g0 > 0.0) {
        return Err(GapError::invalid("spectral share of a constant series"));
    }
    let lags = ((n as f64).sqrt().floor() as usize).min(n - 1);
    let mut total = 2.0 * cutoff;
    for k in 1..=lags {
        let w = 1.0 - k as f64 / (lags as f64 + 1.0);
        total += 2.0 * w * gamma(k) / g0 * 2.0 * (k as f64 * cutoff).sin() / k as f64;
    }
    Ok(total / (2.0 * PI))
}

/// Picks the factor whose first difference has the largest standardized
/// spectral mass at periods of 32 quarters or more. Returns `(psi0, j)`.
pub fn init_trend_loading(f: &DMatrix<f64>) -> Result<(DVector<f64>, usize)> {
    let q = f.ncols();
    let cutoff = 2.0 * PI / 32.0;
    let mut best = (f64::NEG_INFINITY, 0);
    for j in 0..q {
        let col: Vec<f64> = f.column(j).iter().copied().collect();
        let d = crate::linalg::diff(&col);
        let share = low_frequency_share(&d, cutoff)?;
        if share > best.0 {
            best = (share, j);
        }
    }
    let mut psi = DVector::zeros(q);
    psi[best.1] = 1.0;
    Ok((psi, best.1))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendCycleFit {
    pub psi: DVector<f64>,
    pub sigma2_nu: f64,
    pub sigma_omega: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub tau_var: Vec<f64>,
    /// T x q cycle, `f - psi tau`.
    pub omega: DMatrix<f64>,
    pub tau0: f64,
    pub p0: f64,
    pub trend_index: usize,
    pub loglik_path: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl TrendCycleFit {
    /// Final log-likelihood of the EM path.
    pub fn loglik(&self) -> f64 {
        self.loglik_path.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// T x q trend part of the factors.
    pub fn trend_part(&self) -> DMatrix<f64> {
        let tn = self.tau.len();
        DMatrix::from_fn(tn, self.psi.len(), |t, j| self.psi[j] * self.tau[t])
    }
}

#[derive(Debug, Clone)]
struct TrendParams {
    psi: DVector<f64>,
    sigma2_nu: f64,
    sigma_omega: DMatrix<f64>,
    tau0: f64,
    p0: f64,
}

fn cholesky_with_ridge(s: &DMatrix<f64>) -> DMatrix<f64> {
    let q = s.nrows();
    let mut m = s.clone();
    symmetrize(&mut m);
    let base = (m.trace() / q as f64).abs().max(1e-12);
    let mut ridge = 0.0;
    for _ in 0..30 {
        let trial = &m + DMatrix::identity(q, q) * ridge;
        if let Some(ch) = trial.cholesky() {
            return ch.l();
        }
        ridge = if ridge == 0.0 { base * 1e-10 } else { ridge * 10.0 };
    }
    DMatrix::identity(q, q) * base.sqrt()
}

/// Decorrelated scalar-state model and the log-Jacobian correction.
fn trend_model(par: &TrendParams, f: &DMatrix<f64>) -> (StateSpaceModel, DMatrix<f64>, f64) {
    let q = par.psi.len();
    let l = cholesky_with_ridge(&par.sigma_omega);
    let linv = l.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(q, q));
    let z = &linv * &par.psi;
    let yt = f * linv.transpose();
    let model = StateSpaceModel::basic(
        DMatrix::from_column_slice(q, 1, z.as_slice()),
        DVector::from_element(q, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, par.sigma2_nu),
        DVector::from_element(1, par.tau0),
        DMatrix::from_element(1, 1, par.p0),
    );
    let logdet_l: f64 = (0..q).map(|i| l[(i, i)].abs().ln()).sum();
    (model, yt, -(f.nrows() as f64) * logdet_l)
}

fn trend_m_step(par: &TrendParams, f: &DMatrix<f64>, sm: &SmootherOutput, index: usize) -> TrendParams {
    let (tn, q) = f.shape();
    let tau: Vec<f64> = (0..=tn).map(|t| sm.a_smooth[t][0]).collect();
    let pv: Vec<f64> = (0..=tn).map(|t| sm.p_smooth[t][(0, 0)]).collect();
    let mut num = DVector::zeros(q);
    let mut den = 0.0;
    for t in 1..=tn {
        num += f.row(t - 1).transpose() * tau[t];
        den += tau[t] * tau[t] + pv[t];
    }
    let psi = if den > 0.0 { num / den } else { par.psi.clone() };
    let mut s2 = 0.0;
    for t in 1..=tn {
        let d = tau[t] - tau[t - 1];
        s2 += d * d + pv[t] + pv[t - 1] - 2.0 * sm.p_lag[t][(0, 0)];
    }
    let sigma2_nu = (s2 / tn as f64).max(VAR_FLOOR);
    let mut so = DMatrix::zeros(q, q);
    for t in 1..=tn {
        let e = f.row(t - 1).transpose() - &psi * tau[t];
        so += &e * e.transpose() + &psi * psi.transpose() * pv[t];
    }
    so /= tn as f64;
    symmetrize(&mut so);
    normalize(TrendParams { psi, sigma2_nu, sigma_omega: so, tau0: par.tau0, p0: par.p0 }, index)
}

/// Pins the free scale of `(psi, tau)` to a unit-norm `psi` with a positive
/// entry at `index`; the likelihood is unchanged.
fn normalize(mut par: TrendParams, index: usize) -> TrendParams {
    let norm = par.psi.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return par;
    }
    let c = if par.psi[index] < 0.0 { -norm } else { norm };
    par.psi /= c;
    par.sigma2_nu *= c * c;
    par.tau0 *= c;
    par.p0 *= c * c;
    par
}

/// Second-stage EM for `f_t = psi tau_t + omega_t`, `tau_t = tau_{t-1} + nu_t`.
pub fn estimate_trend_em(f: &DMatrix<f64>, opts: &EmOptions) -> Result<TrendCycleFit> {
    let (tn, q) = f.shape();
    if tn < 4 {
        return Err(GapError::invalid("trend extraction needs at least four periods"));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(GapError::NonFinite("factors".into()));
    }
    let (_, j0) = init_trend_loading(f)?;
    let mut starts = vec![(DVector::from_fn(q, |i, _| if i == j0 { 1.0 } else { 0.0 }), j0)];
    if let Some(v) = level_direction(f) {
        let j = v.iamax();
        starts.insert(0, (v, j));
    }
    let mut best: Option<TrendCycleFit> = None;
    let mut last_err = None;
    for (psi0, j) in starts {
        for &ratio in &START_RATIOS {
            let fit = match start_params(f, &psi0, ratio).and_then(|par| run_trend_em(f, par, j, opts)) {
                Ok(fit) => fit,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let better = match &best {
                None => true,
                Some(b) => fit.loglik() > b.loglik() + 1e-9 * b.loglik().abs().max(1.0),
            };
            if better {
                best = Some(fit);
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| GapError::invalid("trend extraction failed")))
}

/// Trend EM settings used by the estimation pipeline. The trend likelihood is
/// flat near its optimum, so a loose tolerance stops at the starting values.
pub const TREND_EM_OPTIONS: EmOptions = EmOptions { max_iter: 5000, tol: 1e-7 };

/// Trend EM started from an existing fit, for data close to the original.
pub fn refit_trend_em(f: &DMatrix<f64>, start: &TrendCycleFit, opts: &EmOptions) -> Result<TrendCycleFit> {
    if f.ncols() != start.psi.len() || f.nrows() < 4 {
        return Err(GapError::invalid("factor panel does not match the starting trend fit"));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(GapError::NonFinite("factors".into()));
    }
    let par = TrendParams {
        psi: start.psi.clone(),
        sigma2_nu: start.sigma2_nu,
        sigma_omega: start.sigma_omega.clone(),
        tau0: start.tau0,
        p0: start.p0,
    };
    run_trend_em(f, par, start.trend_index, opts)
}

/// Initial trend-to-increment variance ratios tried from each starting factor.
const START_RATIOS: [f64; 3] = [0.0025, 0.05, 0.5];

/// Leading eigenvector of the demeaned second-moment matrix of the factor
/// levels, which a common random walk dominates.
fn level_direction(f: &DMatrix<f64>) -> Option<DVector<f64>> {
    let (tn, q) = f.shape();
    let mean = f.row_mean();
    let mut c = DMatrix::zeros(q, q);
    for t in 0..tn {
        let e = (f.row(t) - &mean).transpose();
        c += &e * e.transpose();
    }
    let eig = c.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(k).into_owned();
    v.iter().all(|x| x.is_finite()).then_some(v)
}

fn start_params(f: &DMatrix<f64>, psi0: &DVector<f64>, ratio: f64) -> Result<TrendParams> {
    let (tn, q) = f.shape();
    let psi0 = psi0.clone();
    let tau_init: Vec<f64> = (f * &psi0).iter().copied().collect();
    let dvar = variance(&crate::linalg::diff(&tau_init));
    if !(dvar > 0.0) {
        return Err(GapError::invalid("initial trend has constant increments"));
    }
    let sigma2_nu0 = ratio * dvar;
    let mut so = DMatrix::zeros(q, q);
    for t in 0..tn {
        let e = f.row(t).transpose() - &psi0 * tau_init[t];
        so += &e * e.transpose();
    }
    so = so / tn as f64 + DMatrix::identity(q, q) * 1e-2;
    Ok(TrendParams { psi: psi0, sigma2_nu: sigma2_nu0, sigma_omega: so, tau0: tau_init[0], p0: dvar * 1e4 })
}

fn run_trend_em(f: &DMatrix<f64>, mut par: TrendParams, j: usize, opts: &EmOptions) -> Result<TrendCycleFit> {
    let (tn, q) = f.shape();
    let mut path = Vec::new();
    let mut iterations = 0;
    loop {
        let (model, yt, adj) = trend_model(&par, f);
        let (filt, sm) = filter_and_smooth(&model, &yt)?;
        let ll = filt.loglik + adj;
        if !ll.is_finite() {
            return Err(GapError::NonFinite("trend log-likelihood".into()));
        }
        path.push(ll);
        let k = path.len();
        let converged = k >= 2 && doz_criterion(path[k - 1], path[k - 2]) < opts.tol;
        if converged || iterations >= opts.max_iter {
            let tau: Vec<f64> = (1..=tn).map(|t| sm.a_smooth[t][0]).collect();
            let tau_var: Vec<f64> = (1..=tn).map(|t| sm.p_smooth[t][(0, 0)]).collect();
            let omega = DMatrix::from_fn(tn, q, |t, i| f[(t, i)] - par.psi[i] * tau[t]);
            return Ok(TrendCycleFit {
                psi: par.psi,
                sigma2_nu: par.sigma2_nu,
                sigma_omega: par.sigma_omega,
                tau,
                tau_var,
                omega,
                tau0: par.tau0,
                p0: par.p0,
                trend_index: j,
                loglik_path: path,
                converged,
                iterations,
            });
        }
        par = trend_m_step(&par, f, &sm, j);
        iterations += 1;
    }
}

/// Smoothed trend for new factor data at fixed trend parameters, with the
/// initial mean replaced by `tau0`.
pub fn smooth_trend_with(tc: &TrendCycleFit, f: &DMatrix<f64>, tau0: f64) -> Result<Vec<f64>> {
    let par = TrendParams {
        psi: tc.psi.clone(),
        sigma2_nu: tc.sigma2_nu,
        sigma_omega: tc.sigma_omega.clone(),
        tau0,
        p0: tc.p0,
    };
    let (model, yt, _) = trend_model(&par, f);
    let (_, sm) = filter_and_smooth(&model, &yt)?;
    Ok((1..=f.nrows()).map(|t| sm.a_smooth[t][0]).collect())
}

/// Log-likelihood of the trend model at the fitted parameters.
pub fn trend_loglik(tc: &TrendCycleFit, f: &DMatrix<f64>) -> Result<f64> {
    let par = TrendParams {
        psi: tc.psi.clone(),
        sigma2_nu: tc.sigma2_nu,
        sigma_omega: tc.sigma_omega.clone(),
        tau0: tc.tau0,
        p0: tc.p0,
    };
    let (model, yt, adj) = trend_model(&par, f);
    Ok(kalman_filter(&model, &yt)?.loglik + adj)
}

/// Potential output of series `i` in data units.
pub fn potential_output(dfm: &DfmFit, tc: &TrendCycleFit, i: usize) -> Vec<f64> {
    let sec = dfm.secular();
    let lam = dfm.params.lambda.row(i);
    let lp: f64 = (0..tc.psi.len()).map(|j| lam[j] * tc.psi[j]).sum();
    let (loc, sc) = (dfm.panel.locations[i], dfm.panel.scales[i]);
    (0..dfm.nobs()).map(|t| loc + sc * (sec[(t, i)] + lp * tc.tau[t])).collect()
}

/// Output gap of series `i` (data units, percentage points for log x 100).
pub fn output_gap(dfm: &DfmFit, tc: &TrendCycleFit, i: usize) -> Vec<f64> {
    let lam = dfm.params.lambda.row(i);
    let sc = dfm.panel.scales[i];
    (0..dfm.nobs())
        .map(|t| sc * (0..tc.psi.len()).map(|j| lam[j] * tc.omega[(t, j)]).sum::<f64>())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecompMode {
    Level,
    YearOnYear,
    QuarterAnnualized,
}

impl FromStr for DecompMode {
    type Err = GapError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "level" => Ok(DecompMode::Level),
            "yoy" => Ok(DecompMode::YearOnYear),
            "qoq_ann" | "qoq-ann" | "qoq" => Ok(DecompMode::QuarterAnnualized),
            other => Err(GapError::invalid(format!("unknown decomposition mode '{other}'"))),
        }
    }
}

/// Additive contributions in data units. `idio` is the remainder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Decomposition {
    pub data: Vec<f64>,
    pub secular: Vec<f64>,
    pub trend: Vec<f64>,
    pub cycle: Vec<f64>,
    pub covid: Vec<f64>,
    pub idio: Vec<f64>,
}

fn transform_mode(x: &[f64], mode: DecompMode) -> Vec<f64> {
    match mode {
        DecompMode::Level => x.to_vec(),
        DecompMode::YearOnYear => (0..x.len()).map(|t| if t >= 4 { x[t] - x[t - 4] } else { f64::NAN }).collect(),
        DecompMode::QuarterAnnualized => (0..x.len()).map(|t| if t >= 1 { 4.0 * (x[t] - x[t - 1]) } else { f64::NAN }).collect(),
    }
}

pub fn decompose_series(dfm: &DfmFit, tc: &TrendCycleFit, i: usize, mode: DecompMode) -> Result<Decomposition> {
    let tn = dfm.nobs();
    if mode == DecompMode::YearOnYear && tn < 5 {
        return Err(GapError::invalid("year-on-year decomposition needs at least five periods"));
    }
    let (loc, sc) = (dfm.panel.locations[i], dfm.panel.scales[i]);
    let sec = dfm.secular();
    let lam = dfm.params.lambda.row(i).transpose();
    let lp = lam.dot(&tc.psi);
    let data: Vec<f64> = (0..tn).map(|t| loc + sc * dfm.panel.values[(t, i)]).collect();
    let secular: Vec<f64> = (0..tn).map(|t| loc + sc * sec[(t, i)]).collect();
    let trend: Vec<f64> = (0..tn).map(|t| sc * lp * tc.tau[t]).collect();
    let cycle = output_gap(dfm, tc, i);
    let covid: Vec<f64> = (0..tn).map(|t| sc * dfm.covid.gamma[i] * dfm.covid.g[t]).collect();
    let idio: Vec<f64> = (0..tn).map(|t| data[t] - secular[t] - trend[t] - cycle[t] - covid[t]).collect();
    Ok(Decomposition {
        data: transform_mode(&data, mode),
        secular: transform_mode(&secular, mode),
        trend: transform_mode(&trend, mode),
        cycle: transform_mode(&cycle, mode),
        covid: transform_mode(&covid, mode),
        idio: transform_mode(&idio, mode),
    })
}

#[derive(Debug, Clone)]
pub struct MtwResult {
    pub tau: Vec<f64>,
    pub mu: f64,
    pub phi: f64,
    pub theta: f64,
    pub sigma2: f64,
    /// AR or MA root on (or numerically at) the unit circle.
    pub flagged: bool,
}

fn arma_model(mu: f64, phi: f64, theta: f64, sigma2: f64) -> StateSpaceModel {
    let t_mat = DMatrix::from_row_slice(2, 2, &[phi, 1.0, 0.0, 0.0]);
    let r = DVector::from_vec(vec![1.0, theta]);
    let q = &r * r.transpose() * sigma2;
    let p0 = discrete_lyapunov(&t_mat, &q, 0.999);
    let mut m = StateSpaceModel::basic(
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DVector::zeros(1),
        t_mat,
        q,
        DVector::zeros(2),
        p0,
    );
    m.d = DMatrix::from_element(1, 1, mu);
    m
}

fn arma_residuals(x: &[f64], mu: f64, phi: f64, theta: f64) -> Vec<f64> {
    let mut e = vec![0.0; x.len()];
    for t in 0..x.len() {
        let prev_x = if t > 0 { x[t - 1] - mu } else { 0.0 };
        let prev_e = if t > 0 { e[t - 1] } else { 0.0 };
        e[t] = x[t] - mu - phi * prev_x - theta * prev_e;
    }
    e
}

/// ARMA(1,1)-based rescaling of trend increments. Rows flagged in
/// `exclude` do not enter the ARMA estimation.
pub fn mtw_correction(tau: &[f64], exclude: &[bool]) -> Result<MtwResult> {
    if tau.len() < 40 {
        return Err(GapError::invalid("MTW correction needs at least 40 periods"));
    }
    let dx = crate::linalg::diff(tau);
    if !(variance(&dx) > 1e-300) {
        return Ok(MtwResult { tau: tau.to_vec(), mu: dx[0], phi: 0.0, theta: 0.0, sigma2: 0.0, flagged: false });
    }
    // dx[k] is the increment into row k+1
    let keep: Vec<bool> = (0..dx.len()).map(|k| !exclude.get(k + 1).copied().unwrap_or(false)).collect();
    let obs: Vec<f64> = dx.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
    let mu0 = obs.iter().sum::<f64>() / obs.len() as f64;
    let s0 = variance(&obs).max(1e-300);
    let scale = s0.sqrt();
    let xs: Vec<f64> = dx.iter().map(|v| v / scale).collect();
    let masked = DMatrix::from_fn(xs.len(), 1, |t, _| if keep[t] { xs[t] } else { f64::NAN });
    let unpack = |p: &[f64]| (p[0], 0.995 * p[1].tanh(), 0.995 * p[2].tanh(), p[3].exp());
    // conditional sum of squares start
    let css = |p: &[f64]| {
        let (mu, phi, theta, _) = unpack(p);
        let e = arma_residuals(&xs, mu, phi, theta);
        e.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v * v).sum::<f64>()
    };
    let (p_css, _) = nelder_mead(css, &[mu0 / scale, 0.0, 0.0, 0.0], 0.3, 1e-12, 3000);
    let e_css = arma_residuals(&xs, unpack(&p_css).0, unpack(&p_css).1, unpack(&p_css).2);
    let s2_css = e_css.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v * v).sum::<f64>() / obs.len() as f64;
    let start = [p_css[0], p_css[1], p_css[2], s2_css.max(1e-8).ln()];
    let negll = |p: &[f64]| {
        let (mu, phi, theta, s2) = unpack(p);
        match kalman_filter(&arma_model(mu, phi, theta, s2), &masked) {
            Ok(f) if f.loglik.is_finite() => -f.loglik,
            _ => f64::INFINITY,
        }
    };
    let (p_ml, _) = nelder_mead(negll, &start, 0.2, 1e-12, 4000);
    let (mu_s, phi, theta, s2) = unpack(&p_ml);
    let mu = mu_s * scale;
    let e: Vec<f64> = arma_residuals(&dx, mu, phi, theta);
    let factor = (1.0 + theta) / (1.0 - phi);
    let mut out = Vec::with_capacity(tau.len());
    out.push(tau[0]);
    for k in 0..dx.len() {
        let next = out[k] + mu + factor * e[k];
        out.push(next);
    }
    Ok(MtwResult {
        tau: out,
        mu,
        phi,
        theta,
        sigma2: s2 * s0,
        flagged: phi.abs() > 0.98 || theta.abs() > 0.98,
    })
}
