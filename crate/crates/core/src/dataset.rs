//! Panel ingestion: per-series metadata, transforms, seasonal adjustment,
//! monthly-to-quarterly aggregation, classification and standardization.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dates::{Month, Quarter};
use crate::error::{GapError, Result};
use crate::linalg::ols;
use crate::stats::{adf_test, long_run_variance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    None,
    FirstDiff,
    Log,
    LogDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrendClass {
    Constant,
    DeterministicSlope,
    LocalLinear,
    LocalLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdioClass {
    Stationary,
    UnitRoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frequency {
    Monthly,
    Quarterly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Seasonal {
    SourceAdjusted,
    DummyAdjust,
}

impl Transform {
    pub fn code(self) -> u8 {
        match self {
            Transform::None => 0,
            Transform::FirstDiff => 1,
            Transform::Log => 2,
            Transform::LogDiff => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Transform::None,
            1 => Transform::FirstDiff,
            2 => Transform::Log,
            3 => Transform::LogDiff,
            _ => return Err(GapError::data(format!("unknown transform code {c}"))),
        })
    }

    /// True when the transformed series is still a level.
    pub fn preserves_levels(self) -> bool {
        matches!(self, Transform::None | Transform::Log)
    }
}

impl TrendClass {
    pub fn code(self) -> u8 {
        match self {
            TrendClass::Constant => 0,
            TrendClass::DeterministicSlope => 1,
            TrendClass::LocalLinear => 2,
            TrendClass::LocalLevel => 3,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => TrendClass::Constant,
            1 => TrendClass::DeterministicSlope,
            2 => TrendClass::LocalLinear,
            3 => TrendClass::LocalLevel,
            _ => return Err(GapError::data(format!("unknown trend code {c}"))),
        })
    }

    /// Series whose standardization removes an OLS-on-time intercept.
    pub fn is_trended(self) -> bool {
        matches!(self, TrendClass::DeterministicSlope | TrendClass::LocalLinear)
    }
}

impl IdioClass {
    pub fn code(self) -> u8 {
        match self {
            IdioClass::Stationary => 0,
            IdioClass::UnitRoot => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => IdioClass::Stationary,
            1 => IdioClass::UnitRoot,
            _ => return Err(GapError::data(format!("unknown idio code {c}"))),
        })
    }
}

impl FromStr for Frequency {
    type Err = GapError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "q" | "quarterly" => Ok(Frequency::Quarterly),
            "m" | "monthly" => Ok(Frequency::Monthly),
            _ => Err(GapError::data(format!("unknown frequency '{s}'"))),
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frequency::Quarterly => "Q",
            Frequency::Monthly => "M",
        })
    }
}

impl FromStr for Seasonal {
    type Err = GapError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "0" | "SA" | "SCA" | "SOURCE" => Ok(Seasonal::SourceAdjusted),
            "1" | "NSA" | "MSA" | "DUMMY" => Ok(Seasonal::DummyAdjust),
            _ => Err(GapError::data(format!("unknown seasonal flag '{s}'"))),
        }
    }
}

/// Per-series metadata row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub ticker: String,
    pub transform: Transform,
    pub trend_class: TrendClass,
    pub idio_class: IdioClass,
    pub frequency: Frequency,
    pub seasonal: Seasonal,
}

impl SeriesMeta {
    pub fn quarterly(ticker: &str, trend_class: TrendClass, idio_class: IdioClass) -> Self {
        SeriesMeta {
            ticker: ticker.to_string(),
            transform: Transform::None,
            trend_class,
            idio_class,
            frequency: Frequency::Quarterly,
            seasonal: Seasonal::SourceAdjusted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trend_class == TrendClass::LocalLinear && !self.transform.preserves_levels() {
            return Err(GapError::data(format!(
                "{}: local linear trend requires a level transform",
                self.ticker
            )));
        }
        Ok(())
    }
}

pub fn validate_meta(meta: &[SeriesMeta]) -> Result<()> {
    let mut seen = HashMap::new();
    for m in meta {
        m.validate()?;
        if seen.insert(m.ticker.clone(), ()).is_some() {
            return Err(GapError::data(format!("duplicate ticker {}", m.ticker)));
        }
    }
    Ok(())
}

/// Quarterly panel. Missing cells are stored as NaN. `locations` and
/// `scales` map model units back to data units: `y = location + scale * value`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Panel {
    pub dates: Vec<Quarter>,
    pub tickers: Vec<String>,
    pub values: DMatrix<f64>,
    pub scales: DVector<f64>,
    pub locations: DVector<f64>,
}

impl Panel {
    pub fn new(dates: Vec<Quarter>, tickers: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != tickers.len() {
            return Err(GapError::invalid("panel dimensions do not match dates/tickers"));
        }
        for w in dates.windows(2) {
            if w[0].distance(w[1]) != 1 {
                return Err(GapError::data(format!(
                    "dates must be consecutive quarters ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        let n = tickers.len();
        Ok(Panel {
            dates,
            tickers,
            values,
            scales: DVector::from_element(n, 1.0),
            locations: DVector::zeros(n),
        })
    }

    pub fn nobs(&self) -> usize {
        self.values.nrows()
    }

    pub fn nseries(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.values[(t, i)].is_finite()
    }

    /// Observation mask (true = observed).
    pub fn mask(&self) -> DMatrix<bool> {
        self.values.map(|v| v.is_finite())
    }

    pub fn index_of(&self, ticker: &str) -> Result<usize> {
        self.tickers
            .iter()
            .position(|t| t == ticker)
            .ok_or_else(|| GapError::invalid(format!("unknown ticker '{ticker}'")))
    }

    /// Row index of a date, if inside the sample.
    pub fn date_index(&self, q: Quarter) -> Option<usize> {
        let k = self.dates.first()?.distance(q);
        (k >= 0 && (k as usize) < self.nobs()).then_some(k as usize)
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.column(i).iter().copied().collect()
    }

    /// Sub-panel of the first `len` dates.
    pub fn truncate(&self, len: usize) -> Panel {
        let mut p = self.clone();
        p.dates.truncate(len);
        p.values = self.values.rows(0, len).into_owned();
        p
    }

    /// Values mapped back to data units.
    pub fn destandardize(&self) -> DMatrix<f64> {
        let mut out = self.values.clone();
        for i in 0..self.nseries() {
            let (l, s) = (self.locations[i], self.scales[i]);
            out.column_mut(i).apply(|v| *v = l + s * *v);
        }
        out
    }

    pub fn raw(&self) -> Panel {
        let mut p = self.clone();
        p.values = self.destandardize();
        p.scales.fill(1.0);
        p.locations.fill(0.0);
        p
    }
}

/// Monthly series to quarterly averages. Partial quarters at the edges are
/// dropped; a quarter with any missing month is missing.
pub fn aggregate_monthly_to_quarterly(series: &[f64], first: Month) -> (Quarter, Vec<f64>) {
    let skip = (3 - first.position_in_quarter()) % 3;
    let start = Month::from_ordinal(first.ordinal() + skip as i64).quarter();
    let out = series
        .get(skip..)
        .unwrap_or(&[])
        .chunks_exact(3)
        .map(|c| {
            if c.iter().all(|v| v.is_finite()) {
                (c[0] + c[1] + c[2]) / 3.0
            } else {
                f64::NAN
            }
        })
        .collect();
    (start, out)
}

/// Seasonal dummy adjustment: removes season means and adds back the grand
/// mean. Missing values stay missing and are ignored in the means.
pub fn deseasonalize_dummy(series: &[f64], period: usize) -> Result<Vec<f64>> {
    if period < 2 {
        return Err(GapError::invalid("seasonal period must be at least 2"));
    }
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (t, v) in series.iter().enumerate() {
        if v.is_finite() {
            sums[t % period] += v;
            counts[t % period] += 1;
        }
    }
    if counts.iter().any(|&c| c < 3) {
        return Err(GapError::data("seasonal adjustment needs at least 3 full cycles"));
    }
    let total: f64 = sums.iter().sum();
    let nobs: usize = counts.iter().sum();
    let grand = total / nobs as f64;
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    Ok(series
        .iter()
        .enumerate()
        .map(|(t, v)| if v.is_finite() { v - means[t % period] + grand } else { *v })
        .collect())
}

pub fn apply_transform(series: &[f64], tr: Transform) -> Result<Vec<f64>> {
    let log = |v: f64| -> Result<f64> {
        if v.is_nan() {
            Ok(f64::NAN)
        } else if v > 0.0 {
            Ok(100.0 * v.ln())
        } else {
            Err(GapError::data(format!("log transform of non-positive value {v}")))
        }
    };
    let diff = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![f64::NAN; x.len()];
        for t in 1..x.len() {
            out[t] = x[t] - x[t - 1];
        }
        out
    };
    Ok(match tr {
        Transform::None => series.to_vec(),
        Transform::FirstDiff => diff(series),
        Transform::Log => series.iter().map(|&v| log(v)).collect::<Result<_>>()?,
        Transform::LogDiff => {
            let l: Vec<f64> = series.iter().map(|&v| log(v)).collect::<Result<_>>()?;
            diff(&l)
        }
    })
}

fn observed_diffs(x: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    (1..x.len())
        .filter(|&t| x[t].is_finite() && x[t - 1].is_finite() && keep(t) && keep(t - 1))
        .map(|t| x[t] - x[t - 1])
        .collect()
}

/// Drift test: does the mean of the first differences differ from zero?
/// Two-sided 5% t-test with a Newey-West (4 lag) variance.
pub fn classify_linear_trend(series: &[f64]) -> Result<bool> {
    let d = observed_diffs(series, |_| true);
    if d.len() < 20 {
        return Err(GapError::invalid("drift test needs at least 20 differences"));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let lrv = long_run_variance(&d, 4);
    if !(lrv > 1e-300) || d.iter().all(|v| (v - d[0]).abs() <= 1e-14 * d[0].abs().max(1.0)) {
        return Ok(false);
    }
    let t = mean / (lrv / n).sqrt();
    Ok(t.abs() > 1.959963984540054)
}

/// Unit-root classification of an idiosyncratic component: true when the
/// ADF test (intercept, BIC lag <= 4, 5%) does not reject a unit root.
/// A deterministic linear sequence has zero residual variance in the ADF
/// regression and is reported as stationary (the statistic is -inf).
pub fn adf_idio_unit_root(idio: &[f64]) -> Result<bool> {
    let x: Vec<f64> = idio.iter().copied().filter(|v| v.is_finite()).collect();
    if x.len() < 30 {
        return Err(GapError::invalid("unit-root test needs at least 30 observations"));
    }
    let res = adf_test(&x, 4)?;
    Ok(!(res.stat < res.crit_5pct))
}

/// Divisor used when standardizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleMode {
    /// Sample standard deviation of the first differences.
    StdDev,
    /// Sample variance of the first differences.
    Variance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardizeOptions {
    pub scale: ScaleMode,
    /// Inclusive window excluded from the location and scale estimates.
    pub exclude: Option<(Quarter, Quarter)>,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        StandardizeOptions { scale: ScaleMode::StdDev, exclude: None }
    }
}

/// Standardizes a (raw) panel. Trended series lose their OLS-on-time
/// intercept, others their mean; all are divided by the dispersion of the
/// first differences. The time regressor is the 1-based row index.
pub fn standardize_levels(panel: &Panel, meta: &[SeriesMeta], opts: &StandardizeOptions) -> Result<Panel> {
    if meta.len() != panel.nseries() {
        return Err(GapError::invalid("metadata does not match panel"));
    }
    let raw = panel.raw();
    let excluded = |t: usize| -> bool {
        match opts.exclude {
            Some((a, b)) => raw.dates[t] >= a && raw.dates[t] <= b,
            None => false,
        }
    };
    let tn = raw.nobs();
    let mut out = raw.clone();
    for (i, m) in meta.iter().enumerate() {
        let x = raw.column(i);
        let d = observed_diffs(&x, |t| !excluded(t));
        if d.len() < 2 {
            return Err(GapError::data(format!("{}: too few differences to standardize", m.ticker)));
        }
        let dm = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|v| (v - dm).powi(2)).sum::<f64>() / (d.len() as f64 - 1.0);
        if !(var > 0.0) {
            return Err(GapError::data(format!("{}: zero variance of first differences", m.ticker)));
        }
        let scale = match opts.scale {
            ScaleMode::StdDev => var.sqrt(),
            ScaleMode::Variance => var,
        };
        let idx: Vec<usize> = (0..tn).filter(|&t| x[t].is_finite() && !excluded(t)).collect();
        let location = if m.trend_class.is_trended() {
            let y = DVector::from_iterator(idx.len(), idx.iter().map(|&t| x[t]));
            let xm = DMatrix::from_fn(idx.len(), 2, |r, c| if c == 0 { 1.0 } else { (idx[r] + 1) as f64 });
            ols(&y, &xm)?.coef[0]
        } else {
            idx.iter().map(|&t| x[t]).sum::<f64>() / idx.len() as f64
        };
        out.locations[i] = location;
        out.scales[i] = scale;
        for t in 0..tn {
            out.values[(t, i)] = (x[t] - location) / scale;
        }
    }
    Ok(out)
}

fn split_line(line: &str) -> Vec<String> {
    line.split(',').map(|s| s.trim().trim_matches('"').to_string()).collect()
}

fn parse_cell(s: &str) -> Result<f64> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .map_err(|_| GapError::data(format!("cannot parse number '{s}'")))
}

/// Reads the metadata table: `ticker,transform,trend,idio,frequency,seasonal`.
pub fn read_meta(path: &Path) -> Result<Vec<SeriesMeta>> {
    let text = std::fs::read_to_string(path)?;
    parse_meta(&text)
}

pub fn parse_meta(text: &str) -> Result<Vec<SeriesMeta>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = split_line(lines.next().ok_or_else(|| GapError::data("empty metadata file"))?);
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| GapError::data(format!("metadata is missing column '{name}'")))
    };
    let (ct, ctr, ctd, cid) = (col("ticker")?, col("transform")?, col("trend")?, col("idio")?);
    let cf = col("frequency").ok();
    let cs = col("seasonal").ok();
    let code = |s: &str| -> Result<u8> {
        s.trim()
            .parse::<u8>()
            .map_err(|_| GapError::data(format!("bad integer code '{s}'")))
    };
    let mut out = Vec::new();
    for line in lines {
        let f = split_line(line);
        let get = |c: usize| f.get(c).map(String::as_str).unwrap_or("");
        out.push(SeriesMeta {
            ticker: get(ct).to_string(),
            transform: Transform::from_code(code(get(ctr))?)?,
            trend_class: TrendClass::from_code(code(get(ctd))?)?,
            idio_class: IdioClass::from_code(code(get(cid))?)?,
            frequency: match cf {
                Some(c) => get(c).parse()?,
                None => Frequency::Quarterly,
            },
            seasonal: match cs {
                Some(c) => get(c).parse()?,
                None => Seasonal::SourceAdjusted,
            },
        });
    }
    validate_meta(&out)?;
    Ok(out)
}

pub fn format_meta(meta: &[SeriesMeta]) -> String {
    let mut s = String::from("ticker,transform,trend,idio,frequency,seasonal\n");
    for m in meta {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.ticker,
            m.transform.code(),
            m.trend_class.code(),
            m.idio_class.code(),
            m.frequency,
            match m.seasonal {
                Seasonal::SourceAdjusted => 0,
                Seasonal::DummyAdjust => 1,
            }
        ));
    }
    s
}

enum Calendar {
    Quarterly(Vec<Quarter>),
    Monthly(Vec<Month>),
}

fn parse_calendar(dates: &[String]) -> Result<Calendar> {
    if dates.is_empty() {
        return Err(GapError::data("data file has no rows"));
    }
    if dates.iter().any(|d| d.contains(['Q', 'q'])) {
        let q: Vec<Quarter> = dates.iter().map(|d| d.parse()).collect::<Result<_>>()?;
        return Ok(Calendar::Quarterly(q));
    }
    let m: Vec<Month> = dates.iter().map(|d| d.parse()).collect::<Result<_>>()?;
    for w in m.windows(2) {
        if w[1].ordinal() <= w[0].ordinal() {
            return Err(GapError::data(format!("dates not increasing at {}", w[1])));
        }
    }
    let monthly = m.len() < 2 || m.windows(2).all(|w| w[1].ordinal() - w[0].ordinal() == 1);
    if monthly && m.len() >= 2 {
        Ok(Calendar::Monthly(m))
    } else {
        Ok(Calendar::Quarterly(m.iter().map(|x| x.quarter()).collect()))
    }
}

/// Parses a data table and metadata into a quarterly panel with transforms
/// and seasonal adjustment applied.
pub fn build_panel(data_text: &str, meta: &[SeriesMeta]) -> Result<Panel> {
    validate_meta(meta)?;
    let mut lines = data_text.lines().filter(|l| !l.trim().is_empty());
    let header = split_line(lines.next().ok_or_else(|| GapError::data("empty data file"))?);
    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in lines {
        let f = split_line(line);
        if f.len() != header.len() {
            return Err(GapError::data(format!("row '{}' has {} fields, expected {}", f[0], f.len(), header.len())));
        }
        dates.push(f[0].clone());
        rows.push(f[1..].iter().map(|c| parse_cell(c)).collect::<Result<_>>()?);
    }
    for h in &header[1..] {
        if !meta.iter().any(|m| &m.ticker == h) {
            return Err(GapError::data(format!("ticker '{h}' in data has no metadata")));
        }
    }
    let columns: Vec<usize> = meta
        .iter()
        .map(|m| {
            header[1..]
                .iter()
                .position(|h| h == &m.ticker)
                .ok_or_else(|| GapError::data(format!("ticker '{}' in metadata missing from data", m.ticker)))
        })
        .collect::<Result<_>>()?;
    let raw_col = |j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };

    let (qdates, quarterly): (Vec<Quarter>, Vec<Vec<f64>>) = match parse_calendar(&dates)? {
        Calendar::Quarterly(q) => {
            for w in q.windows(2) {
                if w[0].distance(w[1]) != 1 {
                    return Err(GapError::data(format!("dates not consecutive quarters at {}", w[1])));
                }
            }
            (q, columns.iter().map(|&j| raw_col(j)).collect())
        }
        Calendar::Monthly(m) => {
            let first = m[0];
            let mut cols = Vec::new();
            let mut start = None;
            for (k, &j) in columns.iter().enumerate() {
                let x = raw_col(j);
                let (q0, agg) = match meta[k].frequency {
                    Frequency::Monthly => aggregate_monthly_to_quarterly(&x, first),
                    Frequency::Quarterly => quarterly_from_monthly_rows(&x, first),
                };
                start = Some(q0);
                cols.push(agg);
            }
            let q0 = start.ok_or_else(|| GapError::data("no series"))?;
            let len = cols.iter().map(Vec::len).min().unwrap_or(0);
            for c in &mut cols {
                c.truncate(len);
            }
            (Quarter::range(q0, len), cols)
        }
    };
    let tn = qdates.len();
    let mut values = DMatrix::from_element(tn, meta.len(), f64::NAN);
    for (k, m) in meta.iter().enumerate() {
        let mut x = apply_transform(&quarterly[k], m.transform)?;
        if m.seasonal == Seasonal::DummyAdjust {
            x = deseasonalize_dummy(&x, 4)?;
        }
        if x.iter().all(|v| !v.is_finite()) {
            return Err(GapError::data(format!("series '{}' is entirely missing", m.ticker)));
        }
        for t in 0..tn {
            values[(t, k)] = x[t];
        }
    }
    Panel::new(qdates, meta.iter().map(|m| m.ticker.clone()).collect(), values)
}

/// Quarterly series stored on a monthly calendar: the quarter takes the mean
/// of whichever months carry a value.
fn quarterly_from_monthly_rows(x: &[f64], first: Month) -> (Quarter, Vec<f64>) {
    let skip = (3 - first.position_in_quarter()) % 3;
    let start = Month::from_ordinal(first.ordinal() + skip as i64).quarter();
    let out = x
        .get(skip..)
        .unwrap_or(&[])
        .chunks_exact(3)
        .map(|c| {
            let v: Vec<f64> = c.iter().copied().filter(|v| v.is_finite()).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        })
        .collect();
    (start, out)
}

/// Loads a panel from a data table and a metadata table.
pub fn load_panel(data_file: &Path, meta_file: &Path) -> Result<(Panel, Vec<SeriesMeta>)> {
    let meta = read_meta(meta_file)?;
    let text = std::fs::read_to_string(data_file)?;
    Ok((build_panel(&text, &meta)?, meta))
}

/// Writes a panel in data units (`date,ticker...`, NA for missing).
pub fn format_panel(panel: &Panel) -> String {
    let raw = panel.destandardize();
    let mut s = String::from("date");
    for t in &panel.tickers {
        s.push(',');
        s.push_str(t);
    }
    s.push('\n');
    for (t, d) in panel.dates.iter().enumerate() {
        s.push_str(&d.to_string());
        for i in 0..panel.nseries() {
            let v = raw[(t, i)];
            if v.is_finite() {
                s.push_str(&format!(",{v}"));
            } else {
                s.push_str(",NA");
            }
        }
        s.push('\n');
    }
    s
}

/// Metadata describing an already processed quarterly panel.
pub fn processed_meta(meta: &[SeriesMeta]) -> Vec<SeriesMeta> {
    meta.iter()
        .map(|m| SeriesMeta {
            transform: Transform::None,
            frequency: Frequency::Quarterly,
            seasonal: Seasonal::SourceAdjusted,
            ..m.clone()
        })
        .collect()
}

/// Re-runs the drift test on series not declared as local trends and
/// returns metadata with `DeterministicSlope`/`Constant` set accordingly.
pub fn classify_trends(panel: &Panel, meta: &[SeriesMeta]) -> Result<Vec<SeriesMeta>> {
    let raw = panel.raw();
    meta.iter()
        .enumerate()
        .map(|(i, m)| {
            let mut m = m.clone();
            if matches!(m.trend_class, TrendClass::Constant | TrendClass::DeterministicSlope) {
                m.trend_class = if classify_linear_trend(&raw.column(i))? {
                    TrendClass::DeterministicSlope
                } else {
                    TrendClass::Constant
                };
            }
            Ok(m)
        })
        .collect()
}
