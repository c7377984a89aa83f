use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use potgap::analysis::{
    adl_expanding, conditional_forecast, forecast_eval, girf as girf_op, quasi_realtime, GirfResult, InflationTarget, QrtMode,
    ADL_MIN_WINDOW,
};
use potgap::dataset::{classify_trends, format_meta, format_panel, load_panel, processed_meta, read_meta, Panel, SeriesMeta};
use potgap::filters::{apply_filter, FilterMethod, FilterParams};
use potgap::inference::{bootstrap_bands, BootstrapOptions, MEAN_BLOCK};
use potgap::io::{dated_columns_csv, dated_matrix_csv, fmt_num, read_dated_column, table_csv};
use potgap::pipeline::{estimate_all, FitBundle, RunConfig};
use potgap::simulate::{simulate_dfm, DgpSpec};
use potgap::trend::{decompose_series, mtw_correction, output_gap, potential_output, DecompMode, TREND_EM_OPTIONS};
use potgap::Quarter;
use serde_json::json;

use crate::{display, usage, CliResult, Job, Manifest, OutArgs};

/// Data sources and estimation settings; flags override the config file.
#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Data table (CSV, dates in the first column).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Metadata table (ticker,transform,trend,idio,frequency,seasonal).
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Number of factors or `auto`.
    #[arg(long)]
    pub q: Option<String>,
    /// VAR order or `auto`.
    #[arg(long)]
    pub p: Option<String>,
    /// First quarter of the Covid regime.
    #[arg(long = "break-date")]
    pub break_date: Option<String>,
    #[arg(long = "window-start")]
    pub window_start: Option<String>,
    #[arg(long = "window-end")]
    pub window_end: Option<String>,
    /// benchmark, alt-factor, exp-decay, frozen-2019 or none.
    #[arg(long = "covid-mode")]
    pub covid_mode: Option<String>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iterate the post-Covid step to convergence instead of a single pass.
    #[arg(long = "step3-iterate")]
    pub step3_iterate: bool,
    /// Ticker of GDP (target of gaps and responses).
    #[arg(long)]
    pub series: Option<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

impl ModelArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", display(p))))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        let flags: [(&str, Option<String>); 10] = [
            ("q", self.q.clone()),
            ("p", self.p.clone()),
            ("break_date", self.break_date.clone()),
            ("window_start", self.window_start.clone()),
            ("window_end", self.window_end.clone()),
            ("covid_mode", self.covid_mode.clone()),
            ("max_iter", self.max_iter.map(|v| v.to_string())),
            ("tol", self.tol.map(|v| v.to_string())),
            ("gdp", self.series.clone()),
            ("step3_iterate", self.step3_iterate.then(|| "true".to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(m) = &self.meta {
            cfg.meta = Some(m.clone());
        }
        if let Some(o) = &self.out.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

fn load_data(cfg: &RunConfig) -> CliResult<(Panel, Vec<SeriesMeta>)> {
    let data = cfg.data.as_ref().ok_or_else(|| usage("no data file: pass --data or set `data` in the config"))?;
    let meta = cfg.meta.as_ref().ok_or_else(|| usage("no metadata file: pass --meta or set `meta` in the config"))?;
    for p in [data, meta] {
        if !p.exists() {
            return Err(usage(format!("file not found: {}", display(p))));
        }
    }
    Ok(load_panel(data, meta)?)
}

fn manifest_with_config(command: &'static str, cfg: &RunConfig) -> Manifest {
    let mut m = Manifest::new(command, cfg.out.clone());
    m.params = cfg.resolved();
    m
}

/// Estimated model, loaded from a saved fit or estimated from data.
#[derive(Args, Clone)]
pub struct FitArgs {
    /// Fit produced by `estimate` (fit.json); otherwise estimates from --data/--meta.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

impl FitArgs {
    fn load(&self, m: &mut Manifest) -> CliResult<FitBundle> {
        match &self.fit {
            Some(p) => {
                if !p.exists() {
                    return Err(usage(format!("fit file not found: {}", display(p))));
                }
                m.param("fit", display(p));
                let bundle = FitBundle::load(p)?;
                m.param("covid_mode", bundle.config.covid_mode);
                m.param("q", bundle.dfm.params.q);
                m.param("p", bundle.dfm.params.p);
                Ok(bundle)
            }
            None => {
                let cfg = self.model.resolve()?;
                let (raw, meta) = load_data(&cfg)?;
                let (dfm, trend) = estimate_all(&raw, &meta, &cfg.estimate)?;
                Ok(FitBundle { config: cfg.estimate, dfm, trend })
            }
        }
    }
}

fn gdp_index(panel: &Panel, requested: Option<&str>) -> CliResult<usize> {
    match requested {
        Some(t) => Ok(panel.index_of(t)?),
        None => Ok(panel.index_of("GDP").unwrap_or(0)),
    }
}

fn data_units(bundle: &FitBundle, i: usize) -> Vec<f64> {
    let p = &bundle.dfm.panel;
    (0..p.nobs()).map(|t| p.locations[i] + p.scales[i] * p.values[(t, i)]).collect()
}

// ---------------------------------------------------------------- ingest

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub meta: PathBuf,
    /// Re-run the drift test on series not declared as local trends.
    #[arg(long)]
    pub classify: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn ingest(a: IngestArgs) -> CliResult<Job> {
    let out = a.out.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut manifest = Manifest::new("ingest", out);
    manifest.param("data", display(&a.data));
    manifest.param("meta", display(&a.meta));
    manifest.param("classify", a.classify);
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            for p in [&a.data, &a.meta] {
                if !p.exists() {
                    return Err(usage(format!("file not found: {}", display(p))));
                }
            }
            let meta = read_meta(&a.meta)?;
            let (panel, _) = load_panel(&a.data, &a.meta)?;
            let mut out_meta = processed_meta(&meta);
            if a.classify {
                out_meta = classify_trends(&panel, &out_meta)?;
            }
            m.write("panel.csv", &format_panel(&panel))?;
            m.write("meta.csv", &format_meta(&out_meta))?;
            let missing = panel.values.iter().filter(|v| !v.is_finite()).count();
            m.result("nobs", json!(panel.nobs()));
            m.result("nseries", json!(panel.nseries()));
            m.result("first", json!(panel.dates[0].to_string()));
            m.result("last", json!(panel.dates[panel.nobs() - 1].to_string()));
            m.result("missing_cells", json!(missing));
            Ok(())
        }),
    })
}

// -------------------------------------------------------------- simulate

#[derive(Args)]
pub struct SimulateArgs {
    /// DGP specification (`key = value` lines); defaults to a small panel.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the seed of the specification.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

pub fn simulate(a: SimulateArgs) -> CliResult<Job> {
    let text = match &a.spec {
        Some(p) => std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", display(p))))?,
        None => String::new(),
    };
    let mut spec = DgpSpec::parse(&text)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let out = a.out.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut manifest = Manifest::new("simulate", out);
    if let Some(p) = &a.spec {
        manifest.param("spec", display(p));
    }
    manifest.seeds.insert("dgp".into(), spec.seed);
    manifest.result("spec", serde_json::to_value(&spec).unwrap_or_default());
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let sim = simulate_dfm(&spec)?;
            let tr = &sim.truth;
            let dates = &sim.panel.dates;
            m.write("panel.csv", &format_panel(&sim.panel))?;
            m.write("meta.csv", &format_meta(&sim.meta))?;
            m.write(
                "truth_gap.csv",
                &dated_columns_csv(dates, &[("og", &tr.og), ("po", &tr.po), ("tau", &tr.tau), ("g", &tr.g), ("s", &tr.s)])?,
            )?;
            let fh: Vec<String> = (1..=spec.q).map(|j| format!("f{j}")).collect();
            m.write("truth_factors.csv", &dated_matrix_csv(dates, &fh, &tr.f)?)?;
            let rows: Vec<Vec<String>> = (0..spec.n)
                .map(|i| {
                    let mut r = vec![sim.panel.tickers[i].clone()];
                    r.extend((0..spec.q).map(|j| fmt_num(tr.lambda[(i, j)])));
                    r.push(fmt_num(tr.gamma[i]));
                    r
                })
                .collect();
            let mut header = vec!["ticker".to_string()];
            header.extend((1..=spec.q).map(|j| format!("lambda{j}")));
            header.push("gamma".into());
            let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
            m.write("truth_loadings.csv", &table_csv(&hdr, &rows))?;
            m.result("psi", json!(tr.psi.as_slice()));
            m.result("sigma2_nu", json!(tr.sigma2_nu));
            Ok(())
        }),
    })
}

// -------------------------------------------------------------- estimate

#[derive(Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also write every smoothed state to states.csv.
    #[arg(long = "dump-states")]
    pub dump_states: bool,
}

fn params_text(b: &FitBundle) -> String {
    let p = &b.dfm.params;
    let tickers = &b.dfm.panel.tickers;
    let mut s = String::from("# estimated parameters (standardized units); key = value\n");
    let _ = writeln!(s, "q = {}\np = {}\nsigma2_z = {}", p.q, p.p, p.sigma2_z);
    for (k, a) in p.a.iter().enumerate() {
        for i in 0..p.q {
            for j in 0..p.q {
                let _ = writeln!(s, "A{}.{}.{} = {}", k + 1, i + 1, j + 1, a[(i, j)]);
            }
        }
    }
    for i in 0..p.q {
        for j in 0..p.q {
            let _ = writeln!(s, "sigma_u.{}.{} = {}", i + 1, j + 1, p.sigma_u[(i, j)]);
        }
    }
    for (i, t) in tickers.iter().enumerate() {
        for j in 0..p.q {
            let _ = writeln!(s, "lambda.{t}.{} = {}", j + 1, p.lambda[(i, j)]);
        }
        let per = [
            ("intercept", p.intercept[i]),
            ("slope", p.slope[i]),
            ("sigma2_e", p.sigma2_e[i]),
            ("r", p.r[i]),
            ("sigma2_eta", p.sigma2_eta[i]),
            ("sigma2_eps", p.sigma2_eps[i]),
            ("gamma", b.dfm.covid.gamma[i]),
            ("location", b.dfm.panel.locations[i]),
            ("scale", b.dfm.panel.scales[i]),
        ];
        for (k, v) in per {
            let _ = writeln!(s, "{k}.{t} = {v}");
        }
    }
    let tc = &b.trend;
    for j in 0..p.q {
        let _ = writeln!(s, "psi.{} = {}", j + 1, tc.psi[j]);
    }
    let _ = writeln!(s, "sigma2_nu = {}", tc.sigma2_nu);
    for i in 0..p.q {
        for j in 0..p.q {
            let _ = writeln!(s, "sigma_omega.{}.{} = {}", i + 1, j + 1, tc.sigma_omega[(i, j)]);
        }
    }
    s
}

fn write_gap(m: &mut Manifest, b: &FitBundle, gi: usize) -> CliResult<()> {
    let og = output_gap(&b.dfm, &b.trend, gi);
    let po = potential_output(&b.dfm, &b.trend, gi);
    let y = data_units(b, gi);
    m.write("gap.csv", &dated_columns_csv(&b.dfm.panel.dates, &[("data", &y), ("po", &po), ("og", &og)])?)
}

pub fn estimate(a: EstimateArgs) -> CliResult<Job> {
    let cfg = a.model.resolve()?;
    let mut manifest = manifest_with_config("estimate", &cfg);
    manifest.param("dump_states", a.dump_states);
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let (raw, meta) = load_data(&cfg)?;
            let (dfm, trend) = estimate_all(&raw, &meta, &cfg.estimate)?;
            let bundle = FitBundle { config: cfg.estimate.clone(), dfm, trend };
            let gi = gdp_index(&raw, cfg.gdp.as_deref())?;
            bundle.save(&m.path("fit.json"))?;
            m.outputs.push("fit.json".into());
            m.write("params.txt", &params_text(&bundle))?;
            let dfm = &bundle.dfm;
            let dates = &dfm.panel.dates;
            let fh: Vec<String> = (1..=dfm.params.q).map(|j| format!("f{j}")).collect();
            m.write("factors.csv", &dated_matrix_csv(dates, &fh, &dfm.factors())?)?;
            let tau = &bundle.trend.tau;
            m.write("trend.csv", &dated_columns_csv(dates, &[("tau", tau), ("tau_var", &bundle.trend.tau_var)])?)?;
            write_gap(m, &bundle, gi)?;
            m.write("covid.csv", &dated_columns_csv(dates, &[("g", &dfm.covid.g), ("s", &dfm.covid.s)])?)?;
            let rows: Vec<Vec<String>> =
                dfm.panel.tickers.iter().enumerate().map(|(i, t)| vec![t.clone(), fmt_num(dfm.covid.gamma[i])]).collect();
            m.write("covid_loadings.csv", &table_csv(&["ticker", "gamma"], &rows))?;
            let ll: Vec<Vec<String>> =
                dfm.loglik_path.iter().enumerate().map(|(k, v)| vec![k.to_string(), fmt_num(*v)]).collect();
            m.write("loglik.csv", &table_csv(&["iteration", "loglik"], &ll))?;
            if a.dump_states {
                let sh: Vec<String> = (0..dfm.states.ncols()).map(|j| format!("x{j}")).collect();
                m.write("states.csv", &dated_matrix_csv(dates, &sh, &dfm.states)?)?;
            }
            m.param("gdp", &raw.tickers[gi]);
            m.result("q", json!(dfm.params.q));
            m.result("p", json!(dfm.params.p));
            m.result("loglik_path", json!(dfm.loglik_path));
            m.result("converged", json!(dfm.converged));
            m.result("iterations", json!(dfm.iterations));
            m.result("trend_converged", json!(bundle.trend.converged));
            m.result("trend_iterations", json!(bundle.trend.iterations));
            m.result("psi", json!(bundle.trend.psi.as_slice()));
            m.result("covid_decay", json!(dfm.covid.decay));
            m.result("covid_bound_hit", json!(dfm.covid.bound_hit));
            Ok(())
        }),
    })
}

// ------------------------------------------------------------- decompose

#[derive(Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// level, yoy or qoq_ann.
    #[arg(long, default_value = "level")]
    pub mode: String,
    /// Add the ARMA-rescaled (MTW) trend and potential output.
    #[arg(long)]
    pub mtw: bool,
}

pub fn decompose(a: DecomposeArgs) -> CliResult<Job> {
    let cfg = a.fit.model.resolve()?;
    let mode: DecompMode = a.mode.parse()?;
    let mut manifest = manifest_with_config("decompose", &cfg);
    manifest.param("mode", &a.mode);
    manifest.param("mtw", a.mtw);
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let b = a.fit.load(m)?;
            let gi = gdp_index(&b.dfm.panel, cfg.gdp.as_deref())?;
            m.param("series", &b.dfm.panel.tickers[gi]);
            let d = decompose_series(&b.dfm, &b.trend, gi, mode)?;
            let dates = &b.dfm.panel.dates;
            m.write(
                "decomposition.csv",
                &dated_columns_csv(
                    dates,
                    &[
                        ("data", &d.data),
                        ("secular", &d.secular),
                        ("trend", &d.trend),
                        ("cycle", &d.cycle),
                        ("covid", &d.covid),
                        ("idio", &d.idio),
                    ],
                )?,
            )?;
            write_gap(m, &b, gi)?;
            if a.mtw {
                let exclude: Vec<bool> = b.dfm.covid.g.iter().map(|g| *g != 0.0).collect();
                let r = mtw_correction(&b.trend.tau, &exclude)?;
                let p = &b.dfm.panel;
                let lp = b.dfm.params.lambda.row(gi).transpose().dot(&b.trend.psi);
                let sec = b.dfm.secular();
                let po: Vec<f64> = (0..p.nobs())
                    .map(|t| p.locations[gi] + p.scales[gi] * (sec[(t, gi)] + lp * r.tau[t]))
                    .collect();
                m.write("mtw.csv", &dated_columns_csv(dates, &[("tau", &b.trend.tau), ("tau_mtw", &r.tau), ("po_mtw", &po)])?)?;
                m.result("mtw", json!({ "mu": r.mu, "phi": r.phi, "theta": r.theta, "sigma2": r.sigma2, "flagged": r.flagged }));
            }
            Ok(())
        }),
    })
}

// ----------------------------------------------------------------- bands

#[derive(Args)]
pub struct BandsArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Bootstrap replications (overrides `bootstrap_reps`).
    #[arg(long = "B")]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 uses all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Mean block length of the stationary bootstrap.
    #[arg(long = "mean-block", default_value_t = MEAN_BLOCK)]
    pub mean_block: f64,
}

pub fn bands(a: BandsArgs) -> CliResult<Job> {
    let mut cfg = a.fit.model.resolve()?;
    if let Some(r) = a.reps {
        cfg.bootstrap_reps = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if cfg.bootstrap_reps < 2 {
        return Err(usage("--B must be at least 2"));
    }
    let mut manifest = manifest_with_config("bands", &cfg);
    manifest.param("mean_block", a.mean_block);
    manifest.seeds.insert("bootstrap".into(), cfg.seed);
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let b = a.fit.load(m)?;
            let gi = gdp_index(&b.dfm.panel, cfg.gdp.as_deref())?;
            m.param("series", &b.dfm.panel.tickers[gi]);
            let opts = BootstrapOptions {
                reps: cfg.bootstrap_reps,
                seed: cfg.seed,
                jobs: cfg.jobs,
                mean_block: a.mean_block,
                trend_em: TREND_EM_OPTIONS,
            };
            let r = bootstrap_bands(&b.dfm, &b.trend, gi, &opts)?;
            let (og, po) = (&r.og, &r.po);
            m.write(
                "bands.csv",
                &dated_columns_csv(
                    &r.dates,
                    &[
                        ("og", &og.point),
                        ("og_lo68", &og.lo68),
                        ("og_hi68", &og.hi68),
                        ("og_lo84", &og.lo84),
                        ("og_hi84", &og.hi84),
                        ("og_sd", &og.sd),
                        ("po", &po.point),
                        ("po_lo68", &po.lo68),
                        ("po_hi68", &po.hi68),
                        ("po_lo84", &po.lo84),
                        ("po_hi84", &po.hi84),
                        ("po_sd", &po.sd),
                    ],
                )?,
            )?;
            m.result("failures", json!(r.failures));
            Ok(())
        }),
    })
}

// ------------------------------------------------------ girf / scenario

fn write_response(m: &mut Manifest, name: &str, b: &FitBundle, r: &GirfResult) -> CliResult<()> {
    let gi = r.gdp;
    let rows: Vec<Vec<String>> = (0..=r.horizon)
        .map(|h| {
            vec![
                h.to_string(),
                fmt_num(r.shocked_response[h]),
                fmt_num(r.common[(h, gi)]),
                fmt_num(r.po[h]),
                fmt_num(r.og[h]),
            ]
        })
        .collect();
    m.write(&format!("{name}.csv"), &table_csv(&["h", "shocked", "gdp_common", "po", "og"], &rows))?;
    let tickers = &b.dfm.panel.tickers;
    let mut header = vec!["h"];
    header.extend(tickers.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..=r.horizon)
        .map(|h| std::iter::once(h.to_string()).chain((0..tickers.len()).map(|i| fmt_num(r.common[(h, i)]))).collect())
        .collect();
    m.write(&format!("{name}_common.csv"), &table_csv(&header, &rows))
}

#[derive(Args)]
pub struct GirfArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Ticker of the shocked series.
    #[arg(long)]
    pub shock: String,
    /// Shock to the common component in data units.
    #[arg(long, default_value_t = 1.0)]
    pub size: f64,
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
}

pub fn girf(a: GirfArgs) -> CliResult<Job> {
    let cfg = a.fit.model.resolve()?;
    let mut manifest = manifest_with_config("girf", &cfg);
    manifest.param("shock", &a.shock);
    manifest.param("size", a.size);
    manifest.param("horizon", a.horizon);
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let b = a.fit.load(m)?;
            let gi = gdp_index(&b.dfm.panel, cfg.gdp.as_deref())?;
            m.param("series", &b.dfm.panel.tickers[gi]);
            let r = girf_op(&b.dfm, &b.trend, &a.shock, a.size, a.horizon, gi)?;
            write_response(m, "girf", &b, &r)
        }),
    })
}

fn read_path(text: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or("").trim();
        match last.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if k == 0 => continue,
            Err(_) => return Err(usage(format!("path file line {}: cannot parse '{last}'", k + 1))),
        }
    }
    if out.is_empty() {
        return Err(usage("path file holds no values"));
    }
    Ok(out)
}

#[derive(Args)]
pub struct ScenarioArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Ticker whose common component follows the path.
    #[arg(long = "constrain")]
    pub constrained: String,
    /// CSV of deviations (last column, one row per horizon from h = 0).
    #[arg(long)]
    pub path: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub horizon: usize,
}

pub fn scenario(a: ScenarioArgs) -> CliResult<Job> {
    let cfg = a.fit.model.resolve()?;
    let text = std::fs::read_to_string(&a.path).map_err(|e| usage(format!("cannot read {}: {e}", display(&a.path))))?;
    let path = read_path(&text)?;
    let mut manifest = manifest_with_config("scenario", &cfg);
    manifest.param("constrain", &a.constrained);
    manifest.param("path", display(&a.path));
    manifest.param("horizon", a.horizon);
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let b = a.fit.load(m)?;
            let gi = gdp_index(&b.dfm.panel, cfg.gdp.as_deref())?;
            m.param("series", &b.dfm.panel.tickers[gi]);
            let r = conditional_forecast(&b.dfm, &b.trend, &a.constrained, &path, a.horizon, gi)?;
            write_response(m, "scenario", &b, &r)
        }),
    })
}

// ---------------------------------------------------------------- filter

#[derive(Args)]
pub struct FilterArgs {
    /// Dated CSV holding the series.
    #[arg(long)]
    pub input: PathBuf,
    /// Column to filter (default: last column).
    #[arg(long)]
    pub column: Option<String>,
    /// hp, bhp, hamilton, cf or bt.
    #[arg(long)]
    pub method: String,
    /// Parameter overrides, `key=value` (repeatable or comma-separated).
    #[arg(long = "params", value_delimiter = ',')]
    pub params: Vec<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

fn filter_params(list: &[String]) -> CliResult<FilterParams> {
    let mut par = FilterParams::default();
    for kv in list.iter().filter(|s| !s.trim().is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("filter parameter '{kv}' is not key=value")))?;
        par.set(k.trim(), v.trim())?;
    }
    Ok(par)
}

pub fn filter(a: FilterArgs) -> CliResult<Job> {
    let method: FilterMethod = a.method.parse()?;
    let par = filter_params(&a.params)?;
    let out = a.out.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let mut manifest = Manifest::new("filter", out);
    manifest.param("input", display(&a.input));
    manifest.param("method", method);
    manifest.result("filter_params", serde_json::to_value(par).unwrap_or_default());
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let text = std::fs::read_to_string(&a.input).map_err(|e| usage(format!("cannot read {}: {e}", display(&a.input))))?;
            let (dates, y) = read_dated_column(&text, a.column.as_deref())?;
            let r = apply_filter(method, &y, &par)?;
            m.write("filter.csv", &dated_columns_csv(&dates, &[("y", &y), ("trend", &r.trend), ("cycle", &r.cycle)])?)?;
            m.result("params", json!(r.params));
            Ok(())
        }),
    })
}

// -------------------------------------------------------------- forecast

#[derive(Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Dated CSV of quarter-on-quarter inflation.
    #[arg(long)]
    pub inflation: PathBuf,
    /// Column of the inflation file (default: the target name, else the last column).
    #[arg(long = "inflation-column")]
    pub inflation_column: Option<String>,
    /// headline or core.
    #[arg(long, default_value = "core")]
    pub target: String,
    /// Benchmark gap: `internal` (model gap) or a dated CSV (`file#column`).
    #[arg(long, default_value = "internal")]
    pub gap: String,
    /// Alternative gaps as `name=file.csv` or `name=file.csv#column` (repeatable).
    #[arg(long = "alt")]
    pub alt: Vec<String>,
    /// Filters applied to GDP as alternative gaps (`none` to skip).
    #[arg(long, value_delimiter = ',', default_value = "hp,bhp,hamilton,cf,bt")]
    pub filters: Vec<String>,
    /// full, precovid or postcovid (by forecast target date).
    #[arg(long, default_value = "full")]
    pub window: String,
}

#[derive(Clone, Copy)]
enum EvalWindow {
    Full,
    PreCovid,
    PostCovid,
}

impl EvalWindow {
    fn parse(s: &str) -> CliResult<Self> {
        match s {
            "full" => Ok(EvalWindow::Full),
            "precovid" => Ok(EvalWindow::PreCovid),
            "postcovid" => Ok(EvalWindow::PostCovid),
            _ => Err(usage(format!("unknown window '{s}' (full, precovid, postcovid)"))),
        }
    }

    fn contains(self, q: Quarter) -> bool {
        let split = Quarter::new(2020, 1);
        match self {
            EvalWindow::Full => true,
            EvalWindow::PreCovid => q < split,
            EvalWindow::PostCovid => q >= split,
        }
    }
}

/// Values of `series` on `dates` (NaN where absent).
fn align(dates: &[Quarter], src: (&[Quarter], &[f64])) -> Vec<f64> {
    let map: BTreeMap<Quarter, f64> = src.0.iter().copied().zip(src.1.iter().copied()).collect();
    dates.iter().map(|d| map.get(d).copied().unwrap_or(f64::NAN)).collect()
}

/// Reads `file` or `file#column` (last column by default).
fn read_series(spec: &str) -> CliResult<(Vec<Quarter>, Vec<f64>)> {
    let (path, column) = match spec.rsplit_once('#') {
        Some((p, c)) => (p, Some(c)),
        None => (spec, None),
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {path}: {e}")))?;
    Ok(read_dated_column(&text, column)?)
}

pub fn forecast(a: ForecastArgs) -> CliResult<Job> {
    let cfg = a.fit.model.resolve()?;
    let target: InflationTarget = a.target.parse()?;
    let window = EvalWindow::parse(&a.window)?;
    let methods: Vec<FilterMethod> = a
        .filters
        .iter()
        .filter(|s| !s.is_empty() && s.as_str() != "none")
        .map(|s| s.parse())
        .collect::<potgap::Result<_>>()?;
    let alts: Vec<(String, String)> = a
        .alt
        .iter()
        .map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| usage(format!("--alt '{kv}' is not name=file"))))
        .collect::<CliResult<_>>()?;
    let mut manifest = manifest_with_config("forecast", &cfg);
    manifest.param("inflation", display(&a.inflation));
    manifest.param("target", target);
    manifest.param("gap", &a.gap);
    manifest.param("window", &a.window);
    manifest.param("filters", methods.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","));
    manifest.param("alt", a.alt.join(","));
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let column = a.inflation_column.clone().unwrap_or_else(|| target.to_string());
            let text = std::fs::read_to_string(&a.inflation).map_err(|e| usage(format!("cannot read {}: {e}", display(&a.inflation))))?;
            let (pdates, pi) = match read_dated_column(&text, Some(&column)) {
                Ok(v) => v,
                Err(_) if a.inflation_column.is_none() => read_dated_column(&text, None)?,
                Err(e) => return Err(e.into()),
            };
            let needs_fit = a.gap == "internal" || !methods.is_empty();
            let bundle = if needs_fit { Some(a.fit.load(m)?) } else { None };

            let mut gaps: Vec<(String, Vec<Quarter>, Vec<f64>)> = Vec::new();
            let bench = if a.gap == "internal" {
                let b = bundle.as_ref().expect("fit loaded");
                let gi = gdp_index(&b.dfm.panel, cfg.gdp.as_deref())?;
                (b.dfm.panel.dates.clone(), output_gap(&b.dfm, &b.trend, gi))
            } else {
                read_series(&a.gap)?
            };
            if let Some(b) = &bundle {
                let gi = gdp_index(&b.dfm.panel, cfg.gdp.as_deref())?;
                let y = data_units(b, gi);
                for f in &methods {
                    let r = apply_filter(*f, &y, &FilterParams::default())?;
                    gaps.push((f.to_string(), b.dfm.panel.dates.clone(), r.cycle));
                }
            }
            for (name, path) in &alts {
                let (d, v) = read_series(path)?;
                gaps.push((name.clone(), d, v));
            }
            if gaps.is_empty() {
                return Err(usage("no alternative gaps: pass --alt or keep --filters"));
            }

            let bench_al = align(&pdates, (&bench.0, &bench.1));
            let first_origin = ADL_MIN_WINDOW - 1;
            let bench_pts = adl_expanding(&pi, &bench_al, first_origin)?;
            let keep = |origin: usize| pdates.get(origin + 4).is_some_and(|d| window.contains(*d));
            let mut rows = Vec::new();
            let mut fc_cols: Vec<(String, BTreeMap<usize, f64>)> =
                vec![("benchmark".into(), bench_pts.iter().map(|p| (p.origin, p.forecast)).collect())];
            for (name, d, v) in &gaps {
                let al = align(&pdates, (d, v));
                let pts = adl_expanding(&pi, &al, first_origin)?;
                let alt_map: BTreeMap<usize, f64> = pts.iter().map(|p| (p.origin, p.error())).collect();
                let (mut eb, mut ea) = (Vec::new(), Vec::new());
                for p in bench_pts.iter().filter(|p| keep(p.origin)) {
                    if let Some(e) = alt_map.get(&p.origin) {
                        eb.push(p.error());
                        ea.push(*e);
                    }
                }
                let ev = forecast_eval(&eb, &ea)?;
                rows.push(vec![
                    name.clone(),
                    fmt_num(ev.rel_rmse),
                    fmt_num(ev.dm_stat),
                    fmt_num(ev.dm_pvalue),
                    fmt_num(ev.dm_stat_harvey),
                    fmt_num(ev.dm_pvalue_harvey),
                    ev.nobs.to_string(),
                    target.to_string(),
                    a.window.clone(),
                ]);
                fc_cols.push((name.clone(), pts.iter().map(|p| (p.origin, p.forecast)).collect()));
            }
            m.write(
                "forecast_table.csv",
                &table_csv(
                    &["alternative", "rel_rmse", "dm_stat", "dm_pvalue", "dm_stat_harvey", "dm_pvalue_harvey", "nobs", "target", "window"],
                    &rows,
                ),
            )?;
            let mut header = vec!["origin".to_string(), "target_date".into(), "actual".into()];
            header.extend(fc_cols.iter().map(|(n, _)| n.clone()));
            let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
            let fc_rows: Vec<Vec<String>> = bench_pts
                .iter()
                .filter(|p| keep(p.origin))
                .map(|p| {
                    let mut r = vec![pdates[p.origin].to_string(), pdates[p.origin + 4].to_string(), fmt_num(p.actual)];
                    r.extend(fc_cols.iter().map(|(_, c)| c.get(&p.origin).map_or(String::new(), |v| fmt_num(*v))));
                    r
                })
                .collect();
            m.write("forecasts.csv", &table_csv(&hdr, &fc_rows))?;
            Ok(())
        }),
    })
}

// ------------------------------------------------------------------- qrt

#[derive(Args)]
pub struct QrtArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Last quarter of the first vintage.
    #[arg(long = "first-end")]
    pub first_end: String,
    /// Variants: full, none, frozen or frozen:<quarter>.
    #[arg(long, value_delimiter = ',', default_value = "full,none,frozen")]
    pub modes: Vec<String>,
}

pub fn qrt(a: QrtArgs) -> CliResult<Job> {
    let cfg = a.model.resolve()?;
    let first_end: Quarter = a.first_end.parse()?;
    let modes: Vec<QrtMode> = a.modes.iter().map(|s| s.parse()).collect::<potgap::Result<_>>()?;
    let mut manifest = manifest_with_config("qrt", &cfg);
    manifest.param("first_end", first_end);
    manifest.param("modes", modes.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(","));
    Ok(Job {
        manifest,
        run: Box::new(move |m| {
            let (raw, meta) = load_data(&cfg)?;
            let gi = gdp_index(&raw, cfg.gdp.as_deref())?;
            let gdp = raw.tickers[gi].clone();
            m.param("series", &gdp);
            let r = quasi_realtime(&raw, &meta, &cfg.estimate, &gdp, first_end, &modes)?;
            let mut rows = Vec::new();
            for s in &r.series {
                for (k, g) in s.gaps.iter().enumerate() {
                    if let Some(g) = g {
                        for (t, v) in g.iter().enumerate() {
                            rows.push(vec![r.vintages[k].to_string(), s.mode.to_string(), r.dates[t].to_string(), fmt_num(*v)]);
                        }
                    }
                }
            }
            m.write("qrt_gaps.csv", &table_csv(&["vintage", "mode", "date", "og"], &rows))?;
            let rev: Vec<Vec<String>> = r
                .revision_table()
                .iter()
                .map(|x| vec![x.date.to_string(), x.mode.to_string(), fmt_num(x.realtime), fmt_num(x.last)])
                .collect();
            m.write("qrt_revisions.csv", &table_csv(&["date", "mode", "realtime", "final"], &rev))?;
            let failures: Vec<_> = r
                .series
                .iter()
                .flat_map(|s| s.failures.iter().map(move |(q, e)| json!({ "mode": s.mode.to_string(), "vintage": q.to_string(), "error": e })))
                .collect();
            m.result("vintages", json!(r.vintages.len()));
            m.result("failures", json!(failures));
            Ok(())
        }),
    })
}
