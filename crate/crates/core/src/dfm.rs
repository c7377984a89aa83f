//! Non-stationary dynamic factor model: state-space assembly, principal
//! components initialization and EM estimation.
//!
//! Measurement for series `i` in standardized units:
//!
//! ```text
//! y_it = a_i + b_i t + D_it + lambda_i' f_t + zeta_it + e_it
//! ```
//!
//! where `b_i t` is present for deterministic-slope series, `D_it` is a
//! local linear trend or local level state, and `zeta_it` a random-walk
//! state for unit-root idiosyncratic components. Factors follow a VAR(p)
//! whose innovations are scaled by the volatility path `s_t`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covid::CovidAdjust;
use crate::dataset::{IdioClass, Panel, SeriesMeta, TrendClass};
use crate::error::{GapError, Result};
use crate::linalg::{discrete_lyapunov, ols, solve_gram, sym_eigen_desc, symmetrize, variance};
use crate::statespace::{
    kalman_filter, kalman_smoother, smoother_with_reset, FilterOutput, SmootherOutput, StateSpaceModel,
};

/// Fixed measurement variance of rows with a unit-root idiosyncratic state.
pub const SIGMA2_Z: f64 = 1e-2;
const VAR_FLOOR: f64 = 1e-8;
/// Initial-variance inflation `1/(1-0.99)^2` for time-varying blocks.
const DIFFUSE: f64 = 1e4;

/// Set memberships of each series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSets {
    pub trend: Vec<TrendClass>,
    pub unit_root: Vec<bool>,
}

impl SeriesSets {
    pub fn from_meta(meta: &[SeriesMeta]) -> Self {
        SeriesSets {
            trend: meta.iter().map(|m| m.trend_class).collect(),
            unit_root: meta.iter().map(|m| m.idio_class == IdioClass::UnitRoot).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    fn has_slope(&self, i: usize) -> bool {
        self.trend[i] == TrendClass::DeterministicSlope
    }
}

/// Position of each block inside the state vector.
#[derive(Debug, Clone)]
pub struct StateLayout {
    pub q: usize,
    pub p: usize,
    /// `D_it` state (local linear trend or local level).
    pub level: Vec<Option<usize>>,
    /// Slope state of local linear trends.
    pub slope: Vec<Option<usize>>,
    /// Unit-root idiosyncratic state.
    pub idio: Vec<Option<usize>>,
    pub m: usize,
}

impl StateLayout {
    pub fn new(q: usize, p: usize, sets: &SeriesSets) -> Self {
        let n = sets.len();
        let mut m = q * p;
        let mut level = vec![None; n];
        let mut slope = vec![None; n];
        let mut idio = vec![None; n];
        for i in 0..n {
            match sets.trend[i] {
                TrendClass::LocalLinear => {
                    level[i] = Some(m);
                    slope[i] = Some(m + 1);
                    m += 2;
                }
                TrendClass::LocalLevel => {
                    level[i] = Some(m);
                    m += 1;
                }
                _ => {}
            }
            if sets.unit_root[i] {
                idio[i] = Some(m);
                m += 1;
            }
        }
        StateLayout { q, p, level, slope, idio, m }
    }

    pub fn nfactor_states(&self) -> usize {
        self.q * self.p
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DfmParams {
    pub q: usize,
    pub p: usize,
    pub sets: SeriesSets,
    /// n x q loadings.
    pub lambda: DMatrix<f64>,
    /// VAR matrices `A_1..A_p`.
    pub a: Vec<DMatrix<f64>>,
    pub sigma_u: DMatrix<f64>,
    pub intercept: DVector<f64>,
    /// Deterministic slopes (used by deterministic-slope series).
    pub slope: DVector<f64>,
    /// Innovation variances of unit-root idiosyncratic states.
    pub sigma2_e: DVector<f64>,
    /// Measurement variances of rows without an idiosyncratic state.
    pub r: DVector<f64>,
    pub sigma2_eta: DVector<f64>,
    pub sigma2_eps: DVector<f64>,
    pub sigma2_z: f64,
    pub a0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl DfmParams {
    pub fn n(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::new(self.q, self.p, &self.sets)
    }

    pub fn companion(&self) -> DMatrix<f64> {
        companion(&self.a)
    }

    /// Deterministic part of the measurement for row `t` (0-based).
    pub fn deterministic(&self, i: usize, t: usize) -> f64 {
        let mut d = self.intercept[i];
        if self.sets.has_slope(i) {
            d += self.slope[i] * (t + 1) as f64;
        }
        d
    }

    /// State-space form over `tn` periods with volatility path `s`
    /// (empty for one everywhere).
    pub fn to_state_space(&self, tn: usize, s: &[f64]) -> StateSpaceModel {
        let lay = self.layout();
        let n = self.n();
        let (q, p, m) = (self.q, self.p, lay.m);
        let mut z = DMatrix::zeros(n, m);
        let mut h = DVector::zeros(n);
        let mut d = DMatrix::zeros(n, tn.max(1));
        let mut t_mat = DMatrix::zeros(m, m);
        let comp = self.companion();
        t_mat.view_mut((0, 0), (q * p, q * p)).copy_from(&comp);
        let mut shocks: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            for j in 0..q {
                z[(i, j)] = self.lambda[(i, j)];
            }
            for t in 0..tn {
                d[(i, t)] = self.deterministic(i, t);
            }
            if let Some(k) = lay.level[i] {
                z[(i, k)] = 1.0;
                t_mat[(k, k)] = 1.0;
            }
            if let (Some(kd), Some(kb)) = (lay.level[i], lay.slope[i]) {
                t_mat[(kd, kb)] = 1.0;
                t_mat[(kb, kb)] = 1.0;
                shocks.push((kb, self.sigma2_eta[i]));
            } else if let Some(kd) = lay.level[i] {
                shocks.push((kd, self.sigma2_eps[i]));
            }
            if let Some(k) = lay.idio[i] {
                z[(i, k)] = 1.0;
                t_mat[(k, k)] = 1.0;
                shocks.push((k, self.sigma2_e[i]));
                h[i] = self.sigma2_z;
            } else {
                h[i] = self.r[i];
            }
        }
        let r = q + shocks.len();
        let mut rsel = DMatrix::zeros(m, r);
        let mut qm = DMatrix::zeros(r, r);
        for j in 0..q {
            rsel[(j, j)] = 1.0;
        }
        qm.view_mut((0, 0), (q, q)).copy_from(&self.sigma_u);
        for (k, &(state, var)) in shocks.iter().enumerate() {
            rsel[(state, q + k)] = 1.0;
            qm[(q + k, q + k)] = var;
        }
        let mut scaled = vec![false; r];
        scaled[..q].iter_mut().for_each(|v| *v = true);
        StateSpaceModel {
            z,
            d,
            h,
            t_mat,
            c: DVector::zeros(m),
            rsel,
            q: qm,
            scaled,
            s: s.to_vec(),
            a0: self.a0.clone(),
            p0: self.p0.clone(),
        }
    }
}

/// Companion matrix of a VAR(p).
pub fn companion(a: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = a.len();
    let q = a[0].nrows();
    let mut c = DMatrix::zeros(q * p, q * p);
    for (j, aj) in a.iter().enumerate() {
        c.view_mut((0, j * q), (q, q)).copy_from(aj);
    }
    for j in 1..p {
        for k in 0..q {
            c[(j * q + k, (j - 1) * q + k)] = 1.0;
        }
    }
    c
}

/// First differences of a column, NaN when either end is missing.
fn diff_col(y: &DMatrix<f64>, i: usize) -> Vec<f64> {
    (1..y.nrows()).map(|t| y[(t, i)] - y[(t - 1, i)]).collect()
}

fn finite(x: &[f64]) -> Vec<f64> {
    x.iter().copied().filter(|v| v.is_finite()).collect()
}

/// Calibrated secular-component variances from a standardized panel.
pub fn calibrate(y: &DMatrix<f64>, sets: &SeriesSets) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = sets.len();
    let mut eta = DVector::zeros(n);
    let mut eps = DVector::zeros(n);
    for i in 0..n {
        match sets.trend[i] {
            TrendClass::LocalLinear => {
                let v = variance(&finite(&diff_col(y, i)));
                if !(v > 0.0) {
                    return Err(GapError::data(format!("series {i}: zero variance of differences")));
                }
                eta[i] = 1.0 / (1600.0 * v);
            }
            TrendClass::LocalLevel => {
                let v = variance(&finite(&y.column(i).iter().copied().collect::<Vec<_>>()));
                if !(v > 0.0) {
                    return Err(GapError::data(format!("series {i}: zero variance")));
                }
                eps[i] = 1.0 / (800.0 * v);
            }
            _ => {}
        }
    }
    Ok((eta, eps))
}

/// Pairwise-complete second-moment matrix of already demeaned columns.
fn pairwise_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (tn, n) = x.shape();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            let mut k = 0usize;
            for t in 0..tn {
                let (a, b) = (x[(t, i)], x[(t, j)]);
                if a.is_finite() && b.is_finite() {
                    s += a * b;
                    k += 1;
                }
            }
            let v = if k >= 2 { s / k as f64 } else { 0.0 };
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Standardized, demeaned first differences (NaN where missing).
fn standardized_diffs(y: &DMatrix<f64>) -> DMatrix<f64> {
    let (tn, n) = y.shape();
    let mut dx = DMatrix::from_element(tn.saturating_sub(1), n, f64::NAN);
    for i in 0..n {
        let d = diff_col(y, i);
        let obs = finite(&d);
        if obs.len() < 2 {
            continue;
        }
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let sd = variance(&obs).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for (t, v) in d.iter().enumerate() {
            if v.is_finite() {
                dx[(t, i)] = (v - m) / sd;
            }
        }
    }
    dx
}

/// Least-squares factors given loadings, row by row over observed cells.
pub fn factors_given_loadings(y: &DMatrix<f64>, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let (tn, n) = y.shape();
    let q = lambda.ncols();
    let mut f = DMatrix::zeros(tn, q);
    for t in 0..tn {
        let obs: Vec<usize> = (0..n).filter(|&i| y[(t, i)].is_finite()).collect();
        if obs.is_empty() {
            if t > 0 {
                let prev = f.row(t - 1).into_owned();
                f.set_row(t, &prev);
            }
            continue;
        }
        let lo = DMatrix::from_fn(obs.len(), q, |r, c| lambda[(obs[r], c)]);
        let yo = DMatrix::from_fn(obs.len(), 1, |r, _| y[(t, obs[r])]);
        let g = lo.transpose() * &lo;
        let rhs = lo.transpose() * &yo;
        let ft = match solve_gram(&g, &rhs, "factor cross-section") {
            Ok(v) if obs.len() >= q => v,
            _ => rhs / n as f64,
        };
        for j in 0..q {
            f[(t, j)] = ft[(j, 0)];
        }
    }
    f
}

/// OLS VAR(p) without intercept. Returns `(A_1..A_p, residuals)`.
pub fn fit_var(f: &DMatrix<f64>, p: usize) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let (tn, q) = f.shape();
    if tn <= q * p + 1 {
        return Err(GapError::invalid("VAR: too few observations"));
    }
    let rows = tn - p;
    let x = DMatrix::from_fn(rows, q * p, |r, c| {
        let lag = c / q + 1;
        f[(r + p - lag, c % q)]
    });
    let mut a = vec![DMatrix::zeros(q, q); p];
    let mut resid = DMatrix::zeros(rows, q);
    for k in 0..q {
        let yk = DVector::from_fn(rows, |r, _| f[(r + p, k)]);
        let fit = ols(&yk, &x)?;
        for c in 0..q * p {
            a[c / q][(k, c % q)] = fit.coef[c];
        }
        resid.set_column(k, &fit.resid);
    }
    Ok((a, resid))
}

fn sample_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (tn, k) = x.shape();
    let mean = DVector::from_fn(k, |j, _| x.column(j).mean());
    let mut c = DMatrix::zeros(k, k);
    for t in 0..tn {
        let v = x.row(t).transpose() - &mean;
        c += &v * v.transpose();
    }
    c / (tn as f64 - 1.0).max(1.0)
}

/// Initial values from principal components.
#[derive(Debug, Clone)]
pub struct PcaInit {
    pub params: DfmParams,
    pub factors: DMatrix<f64>,
    pub idio: DMatrix<f64>,
}

/// Principal-components initialization on a standardized level panel.
pub fn init_pca_levels(y: &DMatrix<f64>, sets: &SeriesSets, q: usize, p: usize) -> Result<PcaInit> {
    let (tn, n) = y.shape();
    if sets.len() != n {
        return Err(GapError::invalid("set memberships do not match panel"));
    }
    if q == 0 || p == 0 {
        return Err(GapError::invalid("q and p must be positive"));
    }
    if n < q {
        return Err(GapError::invalid(format!("n = {n} is smaller than q = {q}")));
    }
    if tn < q * p + 4 {
        return Err(GapError::invalid("panel too short for the requested VAR"));
    }
    let dx = standardized_diffs(y);
    let cov = pairwise_cov(&dx);
    let (_, vecs) = sym_eigen_desc(&cov);
    let lambda = vecs.columns(0, q).into_owned() * (n as f64).sqrt();

    // detrended levels
    let mut ydt = y.clone();
    let mut bhat = DVector::zeros(n);
    for i in 0..n {
        let idx: Vec<usize> = (0..tn).filter(|&t| y[(t, i)].is_finite()).collect();
        if idx.len() < 3 {
            return Err(GapError::data(format!("series {i}: fewer than 3 observations")));
        }
        if sets.trend[i].is_trended() {
            let yy = DVector::from_iterator(idx.len(), idx.iter().map(|&t| y[(t, i)]));
            let x = DMatrix::from_fn(idx.len(), 2, |r, c| if c == 0 { 1.0 } else { (idx[r] + 1) as f64 });
            let fit = ols(&yy, &x)?;
            bhat[i] = fit.coef[1];
            for t in 0..tn {
                ydt[(t, i)] = y[(t, i)] - fit.coef[0] - fit.coef[1] * (t + 1) as f64;
            }
        } else {
            let m = idx.iter().map(|&t| y[(t, i)]).sum::<f64>() / idx.len() as f64;
            for t in 0..tn {
                ydt[(t, i)] = y[(t, i)] - m;
            }
        }
    }
    let f = factors_given_loadings(&ydt, &lambda);
    let (a, resid) = fit_var(&f, p)?;
    let sigma_u = sample_cov(&resid);
    let idio = &ydt - &f * lambda.transpose();

    let (sigma2_eta, sigma2_eps) = calibrate(y, sets)?;
    let mut r = DVector::zeros(n);
    let mut sigma2_e = DVector::zeros(n);
    for i in 0..n {
        let col: Vec<f64> = idio.column(i).iter().copied().collect();
        if sets.unit_root[i] {
            sigma2_e[i] = variance(&finite(&crate::linalg::diff(&col))).max(VAR_FLOOR);
        } else {
            r[i] = variance(&finite(&col)).max(VAR_FLOOR);
        }
    }
    let slope = DVector::from_fn(n, |i, _| if sets.trend[i].is_trended() { bhat[i] } else { 0.0 });
    let mut params = DfmParams {
        q,
        p,
        sets: sets.clone(),
        lambda,
        a,
        sigma_u,
        intercept: DVector::zeros(n),
        slope,
        sigma2_e,
        r,
        sigma2_eta,
        sigma2_eps,
        sigma2_z: SIGMA2_Z,
        a0: DVector::zeros(0),
        p0: DMatrix::zeros(0, 0),
    };
    let (a0, p0) = initial_state(&params, &f, &idio, &bhat);
    params.a0 = a0;
    params.p0 = p0;
    Ok(PcaInit { params, factors: f, idio })
}

/// Initial state mean and covariance.
fn initial_state(params: &DfmParams, f: &DMatrix<f64>, idio: &DMatrix<f64>, bhat: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let lay = params.layout();
    let (q, p) = (params.q, params.p);
    let mut a0 = DVector::zeros(lay.m);
    let mut p0 = DMatrix::zeros(lay.m, lay.m);
    for lag in 0..p {
        for j in 0..q {
            a0[lag * q + j] = f[(0, j)];
        }
    }
    let mut qc = DMatrix::zeros(q * p, q * p);
    qc.view_mut((0, 0), (q, q)).copy_from(&params.sigma_u);
    let pf = discrete_lyapunov(&params.companion(), &qc, 0.99);
    p0.view_mut((0, 0), (q * p, q * p)).copy_from(&pf);
    for i in 0..params.n() {
        match (lay.level[i], lay.slope[i]) {
            (Some(kd), Some(kb)) => {
                a0[kd] = bhat[i];
                a0[kb] = bhat[i];
                p0[(kd, kd)] = DIFFUSE * params.sigma2_eta[i];
                p0[(kb, kb)] = DIFFUSE * params.sigma2_eta[i];
            }
            (Some(kd), None) => {
                a0[kd] = 0.0;
                p0[(kd, kd)] = params.sigma2_eps[i];
            }
            _ => {}
        }
        if let Some(k) = lay.idio[i] {
            let first = idio.column(i).iter().copied().find(|v| v.is_finite()).unwrap_or(0.0);
            a0[k] = first;
            p0[(k, k)] = DIFFUSE * params.sigma2_e[i];
        }
    }
    (a0, p0)
}

/// Bai-Ng ICp2 choice of the number of factors on standardized first
/// differences (missing cells set to zero after demeaning).
pub fn select_num_factors(y: &DMatrix<f64>, qmax: usize) -> Result<usize> {
    let dx = standardized_diffs(y);
    let (tn, n) = dx.shape();
    if qmax == 0 || qmax >= n.min(tn) {
        return Err(GapError::invalid(format!("qmax must be in 1..{}", n.min(tn))));
    }
    let x = dx.map(|v| if v.is_finite() { v } else { 0.0 });
    let (vals, _) = sym_eigen_desc(&(x.transpose() * &x));
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let nt = (n * tn) as f64;
    let penalty = (n + tn) as f64 / nt * (n.min(tn) as f64).ln();
    let mut best = (f64::INFINITY, 1);
    for k in 1..=qmax {
        let resid = (total - vals.iter().take(k).map(|v| v.max(0.0)).sum::<f64>()).max(1e-300);
        let ic = (resid / nt).ln() + k as f64 * penalty;
        if ic < best.0 {
            best = (ic, k);
        }
    }
    Ok(best.1)
}

/// BIC choice of the VAR order on a common estimation sample.
pub fn select_var_order(f: &DMatrix<f64>, pmax: usize) -> Result<usize> {
    let (tn, q) = f.shape();
    if pmax == 0 || tn <= q * pmax + 1 + pmax {
        return Err(GapError::invalid("select_var_order: insufficient observations"));
    }
    let rows = tn - pmax;
    let mut best = (f64::INFINITY, 1);
    for p in 1..=pmax {
        let x = DMatrix::from_fn(rows, q * p, |r, c| f[(r + pmax - (c / q + 1), c % q)]);
        let mut resid = DMatrix::zeros(rows, q);
        for k in 0..q {
            let yk = DVector::from_fn(rows, |r, _| f[(r + pmax, k)]);
            resid.set_column(k, &ols(&yk, &x)?.resid);
        }
        let sigma = resid.transpose() * &resid / rows as f64;
        let ld = crate::linalg::log_det_spd(&sigma).ok_or_else(|| GapError::Singular("VAR residual covariance".into()))?;
        let bic = ld + (p * q * q) as f64 * (rows as f64).ln() / rows as f64;
        if bic < best.0 {
            best = (bic, p);
        }
    }
    Ok(best.1)
}

/// Smoothed second moments of the factor transition, one entry per period.
#[derive(Debug, Clone)]
pub struct TransitionMoments {
    /// E[f_t f_t'] for t = 1..T.
    pub ff: Vec<DMatrix<f64>>,
    /// E[f_t x_{t-1}'].
    pub fx: Vec<DMatrix<f64>>,
    /// E[x_{t-1} x_{t-1}'].
    pub xx: Vec<DMatrix<f64>>,
}

impl TransitionMoments {
    pub fn from_smoother(sm: &SmootherOutput, q: usize, p: usize) -> Self {
        let tn = sm.len();
        let k = q * p;
        let mut out = TransitionMoments { ff: Vec::with_capacity(tn), fx: Vec::with_capacity(tn), xx: Vec::with_capacity(tn) };
        for t in 1..=tn {
            let f = sm.a_smooth[t].rows(0, q);
            let x = sm.a_smooth[t - 1].rows(0, k);
            out.ff.push(f * f.transpose() + sm.p_smooth[t].view((0, 0), (q, q)));
            out.fx.push(f * x.transpose() + sm.p_lag[t].view((0, 0), (q, k)));
            out.xx.push(x * x.transpose() + sm.p_smooth[t - 1].view((0, 0), (k, k)));
        }
        out
    }

    /// Weighted sums with weight `1/s_t^2`.
    pub fn sums(&self, s: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut sff = DMatrix::zeros(self.ff[0].nrows(), self.ff[0].ncols());
        let mut sfx = DMatrix::zeros(self.fx[0].nrows(), self.fx[0].ncols());
        let mut sxx = DMatrix::zeros(self.xx[0].nrows(), self.xx[0].ncols());
        for t in 0..self.ff.len() {
            let st = s.get(t).copied().unwrap_or(1.0);
            let w = 1.0 / (st * st);
            sff += &self.ff[t] * w;
            sfx += &self.fx[t] * w;
            sxx += &self.xx[t] * w;
        }
        (sff, sfx, sxx)
    }

    /// Profiled VAR coefficients and innovation covariance.
    pub fn var_update(&self, s: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (sff, sfx, sxx) = self.sums(s);
        let a = solve_gram(&sxx, &sfx.transpose(), "VAR moment matrix")?.transpose();
        let mut sigma = (&sff - &a * sfx.transpose()) / self.ff.len() as f64;
        symmetrize(&mut sigma);
        Ok((a, sigma))
    }
}

/// Closed-form M-step given smoothed moments. `y` must be the data the
/// moments were computed from (or its Covid-purged version).
pub fn m_step(params: &DfmParams, y: &DMatrix<f64>, sm: &SmootherOutput, s: &[f64]) -> Result<DfmParams> {
    let (tn, n) = y.shape();
    let (q, p) = (params.q, params.p);
    let lay = params.layout();
    let mut out = params.clone();

    let ff: Vec<DMatrix<f64>> = (1..=tn)
        .map(|t| {
            let f = sm.a_smooth[t].rows(0, q);
            f * f.transpose() + sm.p_smooth[t].view((0, 0), (q, q))
        })
        .collect();

    for i in 0..n {
        let obs: Vec<usize> = (0..tn).filter(|&t| y[(t, i)].is_finite()).collect();
        if obs.is_empty() {
            continue;
        }
        let extra: Vec<usize> = lay.level[i].into_iter().chain(lay.idio[i]).collect();
        // loadings
        let mut g = DMatrix::zeros(q, q);
        let mut c = DMatrix::zeros(q, 1);
        for &t in &obs {
            let a = &sm.a_smooth[t + 1];
            let pm = &sm.p_smooth[t + 1];
            g += &ff[t];
            let mut target = y[(t, i)] - params.deterministic(i, t);
            for &k in &extra {
                target -= a[k];
            }
            for j in 0..q {
                let mut v = a[j] * target;
                for &k in &extra {
                    v -= pm[(j, k)];
                }
                c[(j, 0)] += v;
            }
        }
        let li = solve_gram(&g, &c, "loading moment matrix")?;
        for j in 0..q {
            out.lambda[(i, j)] = li[(j, 0)];
        }
        // deterministic slope
        if params.sets.has_slope(i) {
            let mut num = 0.0;
            let mut den = 0.0;
            for &t in &obs {
                let a = &sm.a_smooth[t + 1];
                let tt = (t + 1) as f64;
                let mut e = y[(t, i)] - out.intercept[i];
                for j in 0..q {
                    e -= out.lambda[(i, j)] * a[j];
                }
                for &k in &extra {
                    e -= a[k];
                }
                num += tt * e;
                den += tt * tt;
            }
            out.slope[i] = num / den;
        }
        // measurement variance
        if lay.idio[i].is_none() {
            let mut acc = 0.0;
            for &t in &obs {
                let a = &sm.a_smooth[t + 1];
                let pm = &sm.p_smooth[t + 1];
                let mut idx: Vec<(usize, f64)> = (0..q).map(|j| (j, out.lambda[(i, j)])).collect();
                for &k in &extra {
                    idx.push((k, 1.0));
                }
                let mut e = y[(t, i)] - out.deterministic(i, t);
                let mut v = 0.0;
                for &(k, w) in &idx {
                    e -= w * a[k];
                    for &(l, u) in &idx {
                        v += w * u * pm[(k, l)];
                    }
                }
                acc += e * e + v;
            }
            out.r[i] = (acc / obs.len() as f64).max(VAR_FLOOR);
        }
        // unit-root idiosyncratic innovation variance
        if let Some(k) = lay.idio[i] {
            let mut acc = 0.0;
            for t in 1..=tn {
                let d = sm.a_smooth[t][k] - sm.a_smooth[t - 1][k];
                acc += d * d + sm.p_smooth[t][(k, k)] + sm.p_smooth[t - 1][(k, k)] - 2.0 * sm.p_lag[t][(k, k)];
            }
            out.sigma2_e[i] = (acc / tn as f64).max(VAR_FLOOR);
        }
    }

    let mom = TransitionMoments::from_smoother(sm, q, p);
    let (a, sigma) = mom.var_update(s)?;
    for j in 0..p {
        out.a[j] = a.columns(j * q, q).into_owned();
    }
    out.sigma_u = sigma;
    Ok(out)
}

/// Filter and plain (or reset) smoother at the given parameters.
pub fn e_step(params: &DfmParams, y: &DMatrix<f64>, s: &[f64], breakpoint: Option<usize>) -> Result<(FilterOutput, SmootherOutput)> {
    let model = params.to_state_space(y.nrows(), s);
    let f = kalman_filter(&model, y)?;
    let sm = match breakpoint {
        Some(b) if b < y.nrows() => smoother_with_reset(&model, &f, b)?,
        _ => kalman_smoother(&model, &f)?,
    };
    Ok((f, sm))
}

/// One EM iteration: E-step at `params`, then the closed-form M-step.
pub fn em_step(params: &DfmParams, y: &DMatrix<f64>, s: &[f64]) -> Result<DfmParams> {
    let (_, sm) = e_step(params, y, s, None)?;
    m_step(params, y, &sm, s)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { max_iter: 500, tol: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: DfmParams,
    /// Log-likelihood at each visited parameter vector.
    pub loglik_path: Vec<f64>,
    pub converged: bool,
    /// Number of M-steps performed.
    pub iterations: usize,
    /// Smoother at the returned parameters.
    pub smoother: SmootherOutput,
}

/// Relative likelihood change used as the stopping rule.
pub fn doz_criterion(l_new: f64, l_old: f64) -> f64 {
    2.0 * (l_new - l_old).abs() / (l_new.abs() + l_old.abs()).max(1e-300)
}

/// Iterates [`em_step`] until the relative likelihood change falls below
/// `opts.tol` or `opts.max_iter` M-steps have been taken.
pub fn run_em(params0: &DfmParams, y: &DMatrix<f64>, s: &[f64], opts: &EmOptions) -> Result<EmResult> {
    let mut params = params0.clone();
    let mut path = Vec::new();
    let mut iterations = 0;
    loop {
        let (f, sm) = e_step(&params, y, s, None)?;
        if !f.loglik.is_finite() {
            return Err(GapError::NonFinite("EM log-likelihood".into()));
        }
        path.push(f.loglik);
        let k = path.len();
        let converged = k >= 2 && doz_criterion(path[k - 1], path[k - 2]) < opts.tol;
        if converged || iterations >= opts.max_iter {
            return Ok(EmResult { params, loglik_path: path, converged, iterations, smoother: sm });
        }
        params = m_step(&params, y, &sm, s)?;
        iterations += 1;
    }
}

/// PCA initialization followed by EM on the given (pre-break) panel.
pub fn estimate_precovid(y: &DMatrix<f64>, sets: &SeriesSets, q: usize, p: usize, opts: &EmOptions) -> Result<EmResult> {
    let init = init_pca_levels(y, sets, q, p)?;
    run_em(&init.params, y, &[], opts)
}

/// Fitted model: parameters, smoothed states and Covid adjustment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DfmFit {
    pub params: DfmParams,
    /// Standardized (not Covid-purged) panel.
    pub panel: Panel,
    pub meta: Vec<SeriesMeta>,
    pub covid: CovidAdjust,
    /// T x m smoothed state means.
    pub states: DMatrix<f64>,
    /// Smoothed covariance of the last state.
    pub last_state_cov: DMatrix<f64>,
    /// Diagonal of every smoothed state covariance (T x m).
    pub state_var: DMatrix<f64>,
    pub loglik_path: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Row of the first post-break period (`T` when there is none).
    pub breakpoint: usize,
}

impl DfmFit {
    pub fn assemble(
        params: DfmParams,
        panel: Panel,
        meta: Vec<SeriesMeta>,
        covid: CovidAdjust,
        sm: &SmootherOutput,
        em: (&[f64], bool, usize),
        breakpoint: usize,
    ) -> Self {
        let tn = sm.len();
        let m = sm.a_smooth[0].len();
        DfmFit {
            states: sm.means(),
            last_state_cov: sm.p_smooth[tn].clone(),
            state_var: DMatrix::from_fn(tn, m, |t, j| sm.p_smooth[t + 1][(j, j)]),
            params,
            panel,
            meta,
            covid,
            loglik_path: em.0.to_vec(),
            converged: em.1,
            iterations: em.2,
            breakpoint,
        }
    }

    pub fn nobs(&self) -> usize {
        self.states.nrows()
    }

    /// T x q smoothed factors.
    pub fn factors(&self) -> DMatrix<f64> {
        self.states.columns(0, self.params.q).into_owned()
    }

    /// T x n secular components in standardized units.
    pub fn secular(&self) -> DMatrix<f64> {
        let lay = self.params.layout();
        let (tn, n) = (self.nobs(), self.params.n());
        DMatrix::from_fn(tn, n, |t, i| match lay.level[i] {
            Some(k) => self.params.deterministic(i, t) + self.states[(t, k)],
            None => self.params.deterministic(i, t),
        })
    }

    /// T x n unit-root idiosyncratic states (zero for stationary rows).
    pub fn idio_states(&self) -> DMatrix<f64> {
        let lay = self.params.layout();
        let (tn, n) = (self.nobs(), self.params.n());
        DMatrix::from_fn(tn, n, |t, i| lay.idio[i].map_or(0.0, |k| self.states[(t, k)]))
    }

    /// T x n common components `Lambda f_t`.
    pub fn common(&self) -> DMatrix<f64> {
        self.factors() * self.params.lambda.transpose()
    }

    /// T x n Covid components `gamma_i g_t`.
    pub fn covid_component(&self) -> DMatrix<f64> {
        let (tn, n) = (self.nobs(), self.params.n());
        DMatrix::from_fn(tn, n, |t, i| self.covid.gamma[i] * self.covid.g[t])
    }

    /// Measurement residual: observed minus all modelled components.
    pub fn residual(&self) -> DMatrix<f64> {
        &self.panel.values - self.secular() - self.common() - self.covid_component() - self.idio_states()
    }

    pub fn state_space(&self) -> StateSpaceModel {
        self.params.to_state_space(self.nobs(), &self.covid.s)
    }

    /// Data net of the Covid component.
    pub fn purged_values(&self) -> DMatrix<f64> {
        &self.panel.values - self.covid_component()
    }
}
