//! Three-step estimation pipeline and run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covid::{
    estimate_covid_factor, estimate_covid_factor_alt, estimate_covid_volatility, estimate_covid_volatility_expdecay,
    extract_covid_idiosyncratic, purge_covid, CovidAdjust, CovidMode, VolExponent,
};
use crate::dataset::{standardize_levels, Panel, ScaleMode, SeriesMeta, StandardizeOptions};
use crate::dates::Quarter;
use crate::dfm::{
    e_step, estimate_precovid, init_pca_levels, m_step, run_em, select_num_factors, select_var_order, DfmFit,
    EmOptions, SeriesSets, TransitionMoments,
};
use crate::error::{GapError, Result};
use crate::trend::{estimate_trend_em, TrendCycleFit, TREND_EM_OPTIONS};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateConfig {
    /// Number of factors; `None` selects by information criterion.
    pub q: Option<usize>,
    /// VAR order; `None` selects by BIC.
    pub p: Option<usize>,
    pub qmax: usize,
    pub pmax: usize,
    pub break_date: Quarter,
    pub window: (Quarter, Quarter),
    pub covid_mode: CovidMode,
    pub vol_exponent: VolExponent,
    pub em: EmOptions,
    pub step3_iterate: bool,
    pub scale: ScaleMode,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            q: None,
            p: None,
            qmax: 8,
            pmax: 4,
            break_date: Quarter::new(2020, 1),
            window: (Quarter::new(2020, 1), Quarter::new(2021, 4)),
            covid_mode: CovidMode::Benchmark,
            vol_exponent: VolExponent::Factors,
            em: EmOptions::default(),
            step3_iterate: false,
            scale: ScaleMode::StdDev,
        }
    }
}

/// Row of the first post-break period (`T` if the break is after the sample).
pub fn break_row(panel: &Panel, break_date: Quarter) -> Result<usize> {
    let first = panel.dates[0];
    let k = first.distance(break_date);
    if k <= 0 {
        return Err(GapError::invalid(format!("break date {break_date} is not after the first period {first}")));
    }
    Ok((k as usize).min(panel.nobs()))
}

fn window_rows(panel: &Panel, window: (Quarter, Quarter)) -> std::ops::Range<usize> {
    let first = panel.dates[0];
    let tn = panel.nobs() as i64;
    let a = first.distance(window.0).clamp(0, tn) as usize;
    let b = (first.distance(window.1) + 1).clamp(0, tn) as usize;
    a..b.max(a)
}

/// Resolves automatic factor and lag counts on the pre-break data.
fn resolve_orders(y: &nalgebra::DMatrix<f64>, sets: &SeriesSets, cfg: &EstimateConfig) -> Result<(usize, usize)> {
    let q = match cfg.q {
        Some(q) => q,
        None => select_num_factors(y, cfg.qmax.min(y.ncols().min(y.nrows()) - 1))?,
    };
    let p = match cfg.p {
        Some(p) => p,
        None => {
            let init = init_pca_levels(y, sets, q, 1)?;
            select_var_order(&init.factors, cfg.pmax)?
        }
    };
    Ok((q, p))
}

/// Full estimation from a raw (transformed, unstandardized) panel.
pub fn estimate(raw: &Panel, meta: &[SeriesMeta], cfg: &EstimateConfig) -> Result<DfmFit> {
    let opts = StandardizeOptions { scale: cfg.scale, exclude: Some(cfg.window) };
    let panel = standardize_levels(raw, meta, &opts)?;
    estimate_standardized(panel, meta, cfg)
}

/// Estimation on an already standardized panel.
pub fn estimate_standardized(panel: Panel, meta: &[SeriesMeta], cfg: &EstimateConfig) -> Result<DfmFit> {
    let sets = SeriesSets::from_meta(meta);
    let y = panel.values.clone();
    let (tn, n) = y.shape();
    let b = break_row(&panel, cfg.break_date)?;

    if cfg.covid_mode == CovidMode::None {
        let (q, p) = resolve_orders(&y, &sets, cfg)?;
        let init = init_pca_levels(&y, &sets, q, p)?;
        let em = run_em(&init.params, &y, &[], &cfg.em)?;
        let adj = CovidAdjust::identity(n, tn, CovidMode::None);
        return Ok(DfmFit::assemble(
            em.params,
            panel,
            meta.to_vec(),
            adj,
            &em.smoother,
            (&em.loglik_path, em.converged, em.iterations),
            tn,
        ));
    }

    let pre = y.rows(0, b).into_owned();
    let (q, p) = resolve_orders(&pre, &sets, cfg)?;
    let precovid = estimate_precovid(&pre, &sets, q, p, &cfg.em)?;
    if b >= tn {
        let adj = CovidAdjust::identity(n, tn, cfg.covid_mode);
        return Ok(DfmFit::assemble(
            precovid.params,
            panel,
            meta.to_vec(),
            adj,
            &precovid.smoother,
            (&precovid.loglik_path, precovid.converged, precovid.iterations),
            tn,
        ));
    }

    // Step 2
    let (xi, sm0) = extract_covid_idiosyncratic(&y, &precovid.params, b)?;
    if cfg.covid_mode == CovidMode::Frozen2019 {
        let adj = CovidAdjust::identity(n, tn, CovidMode::Frozen2019);
        return Ok(DfmFit::assemble(
            precovid.params,
            panel,
            meta.to_vec(),
            adj,
            &sm0,
            (&precovid.loglik_path, precovid.converged, precovid.iterations),
            b,
        ));
    }
    let rows = window_rows(&panel, cfg.window);
    let mut adj = CovidAdjust::identity(n, tn, cfg.covid_mode);
    adj.window = Some(cfg.window);
    if rows.len() >= 2 {
        let (g, gamma) = match cfg.covid_mode {
            CovidMode::AltFactor => estimate_covid_factor_alt(&xi, &sets.unit_root, rows.clone())?,
            _ => estimate_covid_factor(&xi, &sets.unit_root, rows.clone())?,
        };
        for (k, t) in rows.clone().enumerate() {
            adj.g[t] = g[k];
        }
        adj.gamma = gamma;
    }
    let mom = TransitionMoments::from_smoother(&sm0, q, p);
    adj.regime_start = Some(b);
    match cfg.covid_mode {
        CovidMode::ExpDecay => {
            let fit = estimate_covid_volatility_expdecay(&mom, b, cfg.vol_exponent, n)?;
            adj.s = fit.s;
            adj.decay = Some((fit.s_bar, fit.rho));
        }
        _ => {
            let fit = estimate_covid_volatility(&mom, b, cfg.vol_exponent, n)?;
            adj.s = fit.s;
            adj.bound_hit = fit.bound_hit;
        }
    }

    // Step 3
    let purged = purge_covid(&y, &adj);
    let params3 = m_step(&precovid.params, &purged, &sm0, &adj.s)?;
    let mut path = precovid.loglik_path.clone();
    if cfg.step3_iterate {
        let em = run_em(&params3, &purged, &adj.s, &cfg.em)?;
        path.extend(&em.loglik_path);
        return Ok(DfmFit::assemble(
            em.params,
            panel,
            meta.to_vec(),
            adj,
            &em.smoother,
            (&path, em.converged, precovid.iterations + 1 + em.iterations),
            b,
        ));
    }
    let (filt, sm) = e_step(&params3, &purged, &adj.s, Some(b))?;
    path.push(filt.loglik);
    Ok(DfmFit::assemble(
        params3,
        panel,
        meta.to_vec(),
        adj,
        &sm,
        (&path, precovid.converged, precovid.iterations + 1),
        b,
    ))
}

/// Estimation followed by trend extraction.
pub fn estimate_all(raw: &Panel, meta: &[SeriesMeta], cfg: &EstimateConfig) -> Result<(DfmFit, TrendCycleFit)> {
    let fit = estimate(raw, meta, cfg)?;
    let tc = estimate_trend_em(&fit.factors(), &TREND_EM_OPTIONS)?;
    Ok((fit, tc))
}

/// Serialized estimation output reused by later stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitBundle {
    pub config: EstimateConfig,
    pub dfm: DfmFit,
    pub trend: TrendCycleFit,
}

impl FitBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| GapError::invalid(format!("serialize fit: {e}")))?;
        crate::io::write_text(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| GapError::data(format!("{}: {e}", path.display())))
    }
}

/// Key-value run configuration (`key = value` lines, `#` comments).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub out: PathBuf,
    pub estimate: EstimateConfig,
    pub gdp: Option<String>,
    pub bootstrap_reps: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            meta: None,
            out: PathBuf::from("out"),
            estimate: EstimateConfig::default(),
            gdp: None,
            bootstrap_reps: 500,
            seed: 1,
            jobs: 1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| GapError::invalid(format!("config: bad value '{v}' for '{key}'")))
}

fn parse_auto(key: &str, v: &str) -> Result<Option<usize>> {
    if v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_value(key, v).map(Some)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GapError::invalid(format!("config line {}: expected key = value", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.estimate;
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "meta" => self.meta = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "gdp" => self.gdp = Some(v.to_string()),
            "q" => e.q = parse_auto(key, v)?,
            "p" => e.p = parse_auto(key, v)?,
            "qmax" => e.qmax = parse_value(key, v)?,
            "pmax" => e.pmax = parse_value(key, v)?,
            "break_date" => e.break_date = v.parse()?,
            "window_start" => e.window.0 = v.parse()?,
            "window_end" => e.window.1 = v.parse()?,
            "covid_mode" => e.covid_mode = v.parse()?,
            "covid_vol_exponent" => e.vol_exponent = v.parse()?,
            "max_iter" => e.em.max_iter = parse_value(key, v)?,
            "tol" => e.em.tol = parse_value(key, v)?,
            "step3_iterate" => e.step3_iterate = parse_value(key, v)?,
            "scale" => {
                e.scale = match v {
                    "sd" => ScaleMode::StdDev,
                    "var" => ScaleMode::Variance,
                    _ => return Err(GapError::invalid(format!("config: scale must be sd or var, got '{v}'"))),
                }
            }
            "bootstrap_reps" | "B" => self.bootstrap_reps = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "jobs" => self.jobs = parse_value(key, v)?,
            other => return Err(GapError::invalid(format!("config: unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Resolved configuration as ordered key-value pairs.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let e = &self.estimate;
        let mut m = BTreeMap::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|x| x.display().to_string()).unwrap_or_default();
        m.insert("data".into(), path(&self.data));
        m.insert("meta".into(), path(&self.meta));
        m.insert("out".into(), self.out.display().to_string());
        m.insert("gdp".into(), self.gdp.clone().unwrap_or_default());
        m.insert("q".into(), e.q.map_or("auto".into(), |v| v.to_string()));
        m.insert("p".into(), e.p.map_or("auto".into(), |v| v.to_string()));
        m.insert("qmax".into(), e.qmax.to_string());
        m.insert("pmax".into(), e.pmax.to_string());
        m.insert("break_date".into(), e.break_date.to_string());
        m.insert("window_start".into(), e.window.0.to_string());
        m.insert("window_end".into(), e.window.1.to_string());
        m.insert("covid_mode".into(), e.covid_mode.to_string());
        m.insert(
            "covid_vol_exponent".into(),
            match e.vol_exponent {
                VolExponent::Factors => "q".into(),
                VolExponent::Series => "n".into(),
            },
        );
        m.insert("max_iter".into(), e.em.max_iter.to_string());
        m.insert("tol".into(), e.em.tol.to_string());
        m.insert("step3_iterate".into(), e.step3_iterate.to_string());
        m.insert(
            "scale".into(),
            match e.scale {
                ScaleMode::StdDev => "sd".into(),
                ScaleMode::Variance => "var".into(),
            },
        );
        m.insert("bootstrap_reps".into(), self.bootstrap_reps.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("jobs".into(), self.jobs.to_string());
        m
    }
}
