//! Impulse responses, scenarios, gap regressions, inflation forecasting and
//! the quasi-real-time harness.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covid::CovidMode;
use crate::dataset::{Panel, SeriesMeta};
use crate::dates::Quarter;
use crate::dfm::{e_step, DfmFit};
use crate::error::{GapError, Result};
use crate::linalg::{ols, symmetrize};
use crate::pipeline::{estimate_all, EstimateConfig};
use crate::stats::{long_run_variance, normal_cdf, ols_hac, t_two_sided_pvalue, HacRegression};
use crate::trend::{output_gap, smooth_trend_with, TrendCycleFit};

/// Pseudo-observation noise relative to the conditioned variance.
const PSEUDO_NOISE: f64 = 1e-10;

/// Conditional minus unconditional forecasts after pinning one series'
/// common component. All responses are in data units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GirfResult {
    pub shocked: String,
    pub horizon: usize,
    /// Response of the shocked series' common component, h = 0..=H.
    pub shocked_response: Vec<f64>,
    /// (H+1) x n responses of every common component.
    pub common: DMatrix<f64>,
    /// (H+1) x q factor responses (standardized units).
    pub factors: DMatrix<f64>,
    pub gdp: usize,
    pub po: Vec<f64>,
    pub og: Vec<f64>,
}

/// Responses to a deviation `path` (data units of the constrained series)
/// imposed on its common component over the first `path.len()` horizons.
pub fn conditional_forecast(
    dfm: &DfmFit,
    tc: &TrendCycleFit,
    constrained: &str,
    path: &[f64],
    horizon: usize,
    gdp: usize,
) -> Result<GirfResult> {
    let i = dfm.panel.index_of(constrained)?;
    if horizon < 1 {
        return Err(GapError::invalid("horizon must be at least 1"));
    }
    if path.len() > horizon + 1 {
        return Err(GapError::invalid("conditioning path longer than the horizon"));
    }
    if gdp >= dfm.params.n() {
        return Err(GapError::invalid(format!("series index {gdp} out of range")));
    }
    let (q, p) = (dfm.params.q, dfm.params.p);
    let k = q * p;
    let tn = dfm.nobs();
    let c = dfm.params.companion();
    let s = dfm.covid.s.last().copied().unwrap_or(1.0);
    let mut noise = DMatrix::zeros(k, k);
    noise.view_mut((0, 0), (q, q)).copy_from(&(&dfm.params.sigma_u * (s * s)));
    let mut z = DVector::zeros(k);
    for j in 0..q {
        z[j] = dfm.params.lambda[(i, j)];
    }
    let sc_i = dfm.panel.scales[i];

    let mut pm = dfm.last_state_cov.view((0, 0), (k, k)).into_owned();
    let mut delta = DVector::zeros(k);
    let mut base: DVector<f64> = dfm.states.row(tn - 1).columns(0, k).transpose();
    let mut fd = DMatrix::zeros(horizon + 1, q);
    let mut fu = DMatrix::zeros(horizon + 1, q);
    for h in 0..=horizon {
        delta = &c * &delta;
        base = &c * &base;
        pm = &c * &pm * c.transpose() + &noise;
        symmetrize(&mut pm);
        if let Some(&target) = path.get(h) {
            let pz = &pm * &z;
            let f = z.dot(&pz);
            if !(f > 0.0) {
                return Err(GapError::Singular("conditioning variance".into()));
            }
            let gain = &pz / (f * (1.0 + PSEUDO_NOISE));
            let v = target / sc_i - z.dot(&delta);
            delta += &gain * v;
            pm -= &gain * pz.transpose();
            symmetrize(&mut pm);
        }
        for j in 0..q {
            fd[(h, j)] = delta[j];
            fu[(h, j)] = base[j];
        }
    }

    let n = dfm.params.n();
    let common = DMatrix::from_fn(horizon + 1, n, |h, r| {
        dfm.panel.scales[r] * (0..q).map(|j| dfm.params.lambda[(r, j)] * fd[(h, j)]).sum::<f64>()
    });
    let shocked_response = common.column(i).iter().copied().collect();

    // Trend and cycle responses from the trend smoother on the extended paths.
    let f_hat = dfm.factors();
    let stack = |future: &DMatrix<f64>| {
        DMatrix::from_fn(tn + horizon + 1, q, |t, j| if t < tn { f_hat[(t, j)] } else { future[(t - tn, j)] })
    };
    let f_unc = stack(&fu);
    let f_cond = stack(&(&fu + &fd));
    let tau_u = smooth_trend_with(tc, &f_unc, tc.tau0)?;
    let tau_c = smooth_trend_with(tc, &f_cond, tc.tau0)?;
    let lam = dfm.params.lambda.row(gdp);
    let lp: f64 = (0..q).map(|j| lam[j] * tc.psi[j]).sum();
    let sc = dfm.panel.scales[gdp];
    let mut po = Vec::with_capacity(horizon + 1);
    let mut og = Vec::with_capacity(horizon + 1);
    for h in 0..=horizon {
        let dtau = tau_c[tn + h] - tau_u[tn + h];
        po.push(sc * lp * dtau);
        og.push(common[(h, gdp)] - sc * lp * dtau);
    }
    Ok(GirfResult {
        shocked: constrained.to_string(),
        horizon,
        shocked_response,
        common,
        factors: fd,
        gdp,
        po,
        og,
    })
}

/// Generalized impulse response to a one-period shift of `size` in the
/// common component of `shocked` at T+1.
pub fn girf(dfm: &DfmFit, tc: &TrendCycleFit, shocked: &str, size: f64, horizon: usize, gdp: usize) -> Result<GirfResult> {
    conditional_forecast(dfm, tc, shocked, &[size], horizon, gdp)
}

/// Straight line through the first and last points of `x`.
pub fn linear_counterfactual(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let slope = (x[n - 1] - x[0]) / (n - 1) as f64;
    (0..n).map(|t| x[0] + slope * t as f64).collect()
}

/// Least-squares polynomial smoothing of `x` on an equally spaced grid.
pub fn polynomial_smooth(x: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n < degree + 2 {
        return Err(GapError::invalid(format!("polynomial of degree {degree} needs at least {} points", degree + 2)));
    }
    let grid: Vec<f64> = (0..n).map(|t| 2.0 * t as f64 / (n - 1) as f64 - 1.0).collect();
    let design = DMatrix::from_fn(n, degree + 1, |t, k| grid[t].powi(k as i32));
    let y = DVector::from_column_slice(x);
    let fit = ols(&y, &design)?;
    Ok((0..n).map(|t| y[t] - fit.resid[t]).collect())
}

/// Smoothed deviation of `actual` from `counterfactual`.
pub fn scenario_deviation(actual: &[f64], counterfactual: &[f64], degree: usize) -> Result<Vec<f64>> {
    if actual.len() != counterfactual.len() {
        return Err(GapError::invalid("scenario: series lengths differ"));
    }
    let gap: Vec<f64> = actual.iter().zip(counterfactual).map(|(a, c)| a - c).collect();
    polynomial_smooth(&gap, degree)
}

/// Deviation path calibrated on `history[window]` against a linear
/// counterfactual through the window's endpoints.
pub fn scenario_path(history: &[f64], window: std::ops::Range<usize>, degree: usize) -> Result<Vec<f64>> {
    if window.end > history.len() || window.start >= window.end {
        return Err(GapError::invalid("scenario window outside the history"));
    }
    let x = &history[window];
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GapError::invalid("scenario window contains missing values"));
    }
    scenario_deviation(x, &linear_counterfactual(x), degree)
}

/// HAC lag length for the gap regressions.
pub const REGRESSION_HAC_LAGS: usize = 4;

fn regression(y: &[f64], cols: &[&[f64]], intercept: bool, omit: &[usize]) -> Result<HacRegression> {
    let n = y.len();
    if cols.iter().any(|c| c.len() != n) {
        return Err(GapError::invalid("regression: series lengths differ"));
    }
    let rows: Vec<usize> = (0..n)
        .filter(|t| !omit.contains(t) && y[*t].is_finite() && cols.iter().all(|c| c[*t].is_finite()))
        .collect();
    let k = cols.len() + intercept as usize;
    if rows.len() <= k {
        return Err(GapError::invalid("regression: too few observations"));
    }
    let yv = DVector::from_iterator(rows.len(), rows.iter().map(|&t| y[t]));
    let x = DMatrix::from_fn(rows.len(), k, |r, j| match (intercept, j) {
        (true, 0) => 1.0,
        (true, j) => cols[j - 1][rows[r]],
        (false, j) => cols[j][rows[r]],
    });
    ols_hac(&yv, &x, REGRESSION_HAC_LAGS)
}

/// Okun regression `(ur - ur_trend) = a + b og`; returns `[a, b]` with
/// Newey-West standard errors. Rows in `omit` are dropped.
pub fn okun_regression(og: &[f64], ur: &[f64], ur_trend: &[f64], omit: &[usize]) -> Result<HacRegression> {
    if ur.len() != ur_trend.len() {
        return Err(GapError::invalid("okun: series lengths differ"));
    }
    let gap: Vec<f64> = ur.iter().zip(ur_trend).map(|(u, d)| u - d).collect();
    regression(&gap, &[og], true, omit)
}

/// Expectations-augmented Phillips regression
/// `pi = c + a og + b pi_lag + g pi_exp`; returns `[c, a, b, g]`.
pub fn phillips_regression(pi: &[f64], og: &[f64], pi_lag: &[f64], pi_exp: &[f64], omit: &[usize]) -> Result<HacRegression> {
    regression(pi, &[og, pi_lag, pi_exp], true, omit)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffPoint {
    pub end: Quarter,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub nobs: usize,
}

/// Re-runs `run` on each expanding sample `0..=t` for `t >= start`.
pub fn expanding_coeff_path<F>(dates: &[Quarter], start: Quarter, min_obs: usize, run: F) -> Result<Vec<CoeffPoint>>
where
    F: Fn(usize) -> Result<HacRegression>,
{
    let first = dates
        .iter()
        .position(|d| *d == start)
        .ok_or_else(|| GapError::invalid(format!("start date {start} not in sample")))?;
    let mut out = Vec::new();
    for t in first..dates.len() {
        let reg = run(t + 1)?;
        if out.is_empty() && reg.nobs < min_obs {
            return Err(GapError::invalid(format!("first expanding window has {} < {min_obs} observations", reg.nobs)));
        }
        out.push(CoeffPoint {
            end: dates[t],
            coef: reg.coef.iter().copied().collect(),
            se: reg.se.iter().copied().collect(),
            nobs: reg.nobs,
        });
    }
    Ok(out)
}

/// Minimum observations of the first expanding regression window.
pub const MIN_EXPANDING_OBS: usize = 20;

/// Expanding-window Okun slope path starting at `start`.
pub fn okun_expanding(dates: &[Quarter], og: &[f64], ur: &[f64], ur_trend: &[f64], start: Quarter, omit: &[usize]) -> Result<Vec<CoeffPoint>> {
    expanding_coeff_path(dates, start, MIN_EXPANDING_OBS, |len| {
        okun_regression(&og[..len], &ur[..len], &ur_trend[..len], omit)
    })
}

/// Expanding-window Phillips coefficient path starting at `start`.
pub fn phillips_expanding(
    dates: &[Quarter],
    pi: &[f64],
    og: &[f64],
    pi_lag: &[f64],
    pi_exp: &[f64],
    start: Quarter,
    omit: &[usize],
) -> Result<Vec<CoeffPoint>> {
    expanding_coeff_path(dates, start, MIN_EXPANDING_OBS, |len| {
        phillips_regression(&pi[..len], &og[..len], &pi_lag[..len], &pi_exp[..len], omit)
    })
}

/// Year-on-year inflation at `t` from quarter-on-quarter rates.
pub fn yoy(pi: &[f64], t: usize) -> f64 {
    if t < 3 {
        return f64::NAN;
    }
    pi[t - 3..=t].iter().sum()
}

/// Quarters of data required before the first ADL forecast.
pub const ADL_MIN_WINDOW: usize = 60;

/// One-year-ahead ADL forecast of year-on-year inflation made at row `t`:
/// OLS of `yoy(s+4)` on `yoy(s)` and `og(s)` over `s + 4 <= t`, evaluated
/// at `s = t`.
pub fn adl_forecast(pi: &[f64], og: &[f64], t: usize) -> Result<f64> {
    if pi.len() != og.len() {
        return Err(GapError::invalid("adl: series lengths differ"));
    }
    if t >= pi.len() || t + 1 < ADL_MIN_WINDOW {
        return Err(GapError::invalid(format!("adl: need at least {ADL_MIN_WINDOW} quarters through the forecast origin")));
    }
    let rows: Vec<usize> = (3..=t.saturating_sub(4))
        .filter(|&s| yoy(pi, s + 4).is_finite() && yoy(pi, s).is_finite() && og[s].is_finite())
        .collect();
    if rows.len() < 3 {
        return Err(GapError::invalid("adl: too few complete observations"));
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&s| yoy(pi, s + 4)));
    let x = DMatrix::from_fn(rows.len(), 2, |r, j| if j == 0 { yoy(pi, rows[r]) } else { og[rows[r]] });
    let fit = ols(&y, &x)?;
    Ok(fit.coef[0] * yoy(pi, t) + fit.coef[1] * og[t])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdlPoint {
    pub origin: usize,
    pub forecast: f64,
    pub actual: f64,
}

impl AdlPoint {
    pub fn error(&self) -> f64 {
        self.actual - self.forecast
    }
}

/// Expanding-window ADL forecasts for all origins from row `first_origin`
/// whose target `yoy(t+4)` is observed.
pub fn adl_expanding(pi: &[f64], og: &[f64], first_origin: usize) -> Result<Vec<AdlPoint>> {
    let mut out = Vec::new();
    for t in first_origin..pi.len().saturating_sub(4) {
        let actual = yoy(pi, t + 4);
        if !actual.is_finite() {
            continue;
        }
        out.push(AdlPoint { origin: t, forecast: adl_forecast(pi, og, t)?, actual });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InflationTarget {
    Headline,
    Core,
}

impl FromStr for InflationTarget {
    type Err = GapError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "headline" => Ok(InflationTarget::Headline),
            "core" => Ok(InflationTarget::Core),
            _ => Err(GapError::invalid(format!("unknown target '{s}' (headline or core)"))),
        }
    }
}

impl fmt::Display for InflationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InflationTarget::Headline => "headline",
            InflationTarget::Core => "core",
        })
    }
}

/// HAC lag length of the Diebold-Mariano variance for four-step forecasts.
pub const DM_HAC_LAGS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastEval {
    /// RMSE of the benchmark over RMSE of the alternative.
    pub rel_rmse: f64,
    pub dm_stat: f64,
    pub dm_pvalue: f64,
    /// Small-sample corrected statistic and Student-t p-value.
    pub dm_stat_harvey: f64,
    pub dm_pvalue_harvey: f64,
    pub nobs: usize,
}

fn rmse(e: &[f64]) -> f64 {
    (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
}

/// Relative RMSE and Diebold-Mariano test under squared-error loss.
pub fn forecast_eval(errors_bench: &[f64], errors_alt: &[f64]) -> Result<ForecastEval> {
    let n = errors_bench.len();
    if n != errors_alt.len() {
        return Err(GapError::invalid("forecast errors have different lengths"));
    }
    if n < 8 {
        return Err(GapError::invalid("forecast evaluation needs at least 8 errors"));
    }
    if errors_bench.iter().chain(errors_alt).any(|v| !v.is_finite()) {
        return Err(GapError::NonFinite("forecast errors".into()));
    }
    let ra = rmse(errors_alt);
    if ra == 0.0 {
        return Err(GapError::invalid("alternative forecast has zero RMSE"));
    }
    let d: Vec<f64> = errors_bench.iter().zip(errors_alt).map(|(b, a)| b * b - a * a).collect();
    let dbar = d.iter().sum::<f64>() / n as f64;
    let lrv = long_run_variance(&d, DM_HAC_LAGS);
    let (stat, p) = if dbar == 0.0 {
        (0.0, 1.0)
    } else if !(lrv > 0.0) {
        return Err(GapError::Numerical("zero long-run variance of the loss differential".into()));
    } else {
        let s = dbar / (lrv / n as f64).sqrt();
        (s, 2.0 * (1.0 - normal_cdf(s.abs())))
    };
    let h = (DM_HAC_LAGS + 1) as f64;
    let nf = n as f64;
    let adj = ((nf + 1.0 - 2.0 * h + h * (h - 1.0) / nf) / nf).max(0.0).sqrt();
    let stat_h = stat * adj;
    Ok(ForecastEval {
        rel_rmse: rmse(errors_bench) / ra,
        dm_stat: stat,
        dm_pvalue: p,
        dm_stat_harvey: stat_h,
        dm_pvalue_harvey: t_two_sided_pvalue(stat_h, nf - 1.0),
        nobs: n,
    })
}

/// Estimation variants compared in the quasi-real-time exercise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QrtMode {
    /// Full re-estimation with the configured Covid treatment.
    Full,
    /// Re-estimation without any Covid adjustment.
    NoAdjust,
    /// Parameters frozen at the vintage ending on the given quarter.
    Frozen(Quarter),
}

impl FromStr for QrtMode {
    type Err = GapError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(QrtMode::Full),
            "none" | "no-adjust" => Ok(QrtMode::NoAdjust),
            "frozen" => Ok(QrtMode::Frozen(Quarter::new(2019, 4))),
            _ => match s.strip_prefix("frozen:") {
                Some(q) => Ok(QrtMode::Frozen(q.parse()?)),
                None => Err(GapError::invalid(format!("unknown quasi-real-time mode '{s}'"))),
            },
        }
    }
}

impl fmt::Display for QrtMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QrtMode::Full => f.write_str("full"),
            QrtMode::NoAdjust => f.write_str("none"),
            QrtMode::Frozen(q) => write!(f, "frozen:{q}"),
        }
    }
}

/// Gap estimates of one variant across vintages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QrtSeries {
    pub mode: QrtMode,
    /// Gap path per vintage (`None` when estimation failed).
    pub gaps: Vec<Option<Vec<f64>>>,
    pub failures: Vec<(Quarter, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QrtResult {
    pub dates: Vec<Quarter>,
    /// Last date of each vintage.
    pub vintages: Vec<Quarter>,
    pub series: Vec<QrtSeries>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RevisionRow {
    pub date: Quarter,
    pub mode: QrtMode,
    /// Estimate at the end of the vintage ending on `date`.
    pub realtime: f64,
    /// Estimate for `date` from the last vintage.
    pub last: f64,
}

impl QrtResult {
    /// End-of-sample estimates against the last vintage.
    pub fn revision_table(&self) -> Vec<RevisionRow> {
        let mut rows = Vec::new();
        for s in &self.series {
            let Some(Some(last)) = s.gaps.last() else { continue };
            for (k, g) in s.gaps.iter().enumerate() {
                if let Some(g) = g {
                    let t = g.len() - 1;
                    rows.push(RevisionRow { date: self.vintages[k], mode: s.mode, realtime: g[t], last: last[t] });
                }
            }
        }
        rows
    }
}

type Estimated = (DfmFit, TrendCycleFit);

fn frozen_gap(frozen: &Estimated, raw: &Panel, gdp: usize) -> Result<Vec<f64>> {
    let (dfm, tc) = frozen;
    let n = raw.nseries();
    let y = DMatrix::from_fn(raw.nobs(), n, |t, i| (raw.values[(t, i)] - dfm.panel.locations[i]) / dfm.panel.scales[i]);
    let (_, sm) = e_step(&dfm.params, &y, &[], None)?;
    let q = dfm.params.q;
    let f = sm.means().columns(0, q).into_owned();
    let tau = smooth_trend_with(tc, &f, tc.tau0)?;
    let lam = dfm.params.lambda.row(gdp);
    let sc = dfm.panel.scales[gdp];
    Ok((0..y.nrows())
        .map(|t| sc * (0..q).map(|j| lam[j] * (f[(t, j)] - tc.psi[j] * tau[t])).sum::<f64>())
        .collect())
}

/// Expanding-window re-estimation on final data. Vintages end at every
/// quarter from `first_end` to the last date of `raw`.
pub fn quasi_realtime(
    raw: &Panel,
    meta: &[SeriesMeta],
    cfg: &EstimateConfig,
    gdp: &str,
    first_end: Quarter,
    modes: &[QrtMode],
) -> Result<QrtResult> {
    let gi = raw.index_of(gdp)?;
    let first = raw
        .date_index(first_end)
        .ok_or_else(|| GapError::invalid(format!("first vintage end {first_end} not in sample")))?;
    if first + 1 < 57 {
        return Err(GapError::invalid("the first vintage must span at least 57 quarters"));
    }
    let lens: Vec<usize> = (first + 1..=raw.nobs()).collect();
    let vintages: Vec<Quarter> = lens.iter().map(|&l| raw.dates[l - 1]).collect();
    let run = |cfg: &EstimateConfig, len: usize| -> Result<Estimated> { estimate_all(&raw.truncate(len), meta, cfg) };

    let mut series = Vec::new();
    for &mode in modes {
        let mut mcfg = cfg.clone();
        if mode == QrtMode::NoAdjust {
            mcfg.covid_mode = CovidMode::None;
        }
        let frozen = match mode {
            QrtMode::Frozen(fq) => match raw.date_index(fq) {
                Some(k) if k + 1 < raw.nobs() => Some((fq, run(&mcfg, k + 1)?)),
                _ => None,
            },
            _ => None,
        };
        let results: Vec<Result<Vec<f64>>> = lens
            .par_iter()
            .map(|&len| match &frozen {
                Some((fq, est)) if raw.dates[len - 1] > *fq => frozen_gap(est, &raw.truncate(len), gi),
                _ => run(&mcfg, len).map(|(d, t)| output_gap(&d, &t, gi)),
            })
            .collect();
        let mut gaps = Vec::with_capacity(results.len());
        let mut failures = Vec::new();
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok(g) => gaps.push(Some(g)),
                Err(e) => {
                    failures.push((vintages[k], e.to_string()));
                    gaps.push(None);
                }
            }
        }
        series.push(QrtSeries { mode, gaps, failures });
    }
    Ok(QrtResult { dates: raw.dates.clone(), vintages, series })
}
