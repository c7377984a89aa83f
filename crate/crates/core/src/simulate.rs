//! Synthetic panels with known trend, cycle, Covid shift and volatility.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{IdioClass, Panel, SeriesMeta, TrendClass};
use crate::dates::Quarter;
use crate::dfm::companion;
use crate::error::{GapError, Result};
use crate::linalg::spectral_radius;

/// Covid episode injected into a simulated panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovidSpec {
    pub start: Quarter,
    /// Path of the Covid factor over the window.
    pub g: Vec<f64>,
    /// Standard deviation of the loadings on `g`.
    pub gamma_scale: f64,
    /// Explicit loadings (drawn when `None`).
    pub gamma: Option<DVector<f64>>,
    /// Volatility `s_t = 1 + (s_peak - 1) s_decay^(t - start)` from `start`.
    pub s_peak: f64,
    pub s_decay: f64,
}

impl Default for CovidSpec {
    fn default() -> Self {
        CovidSpec {
            start: Quarter::new(2020, 1),
            g: vec![-1.5, -6.0, 4.0, 0.5, 0.0, 1.0, 0.5, 0.2],
            gamma_scale: 2.5,
            gamma: None,
            s_peak: 3.0,
            s_decay: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub tn: usize,
    pub q: usize,
    pub p: usize,
    pub start: Quarter,
    /// Local linear trend series (series 0, the GDP proxy, is always one).
    pub n_l1: usize,
    pub n_l0: usize,
    /// Deterministic-slope series.
    pub n_slope: usize,
    /// Unit-root idiosyncratic series.
    pub n_i1: usize,
    pub lambda: Option<DMatrix<f64>>,
    /// Unit-norm trend loading (drawn when `None`).
    pub psi: Option<DVector<f64>>,
    /// VAR matrices of the (q-1)-dimensional cycle coordinates.
    pub cycle: Option<Vec<DMatrix<f64>>>,
    pub sigma_nu: f64,
    pub sigma_v: f64,
    /// Component of each cycle loading along the trend loading.
    pub cycle_tilt: f64,
    /// Scale of the GDP proxy's loading on the cycle directions.
    pub gdp_cycle_loading: f64,
    /// Marginal standard deviation of stationary idiosyncratic terms.
    pub idio_sd: f64,
    /// Upper bound of the idiosyncratic AR(1) coefficients.
    pub idio_ar: f64,
    pub unit_root_sd: f64,
    /// Measurement noise on unit-root idiosyncratic series.
    pub i1_noise_sd: f64,
    pub gdp_drift: f64,
    pub eta_sd: f64,
    pub eps_sd: f64,
    pub missing_frac: f64,
    pub covid: Option<CovidSpec>,
    pub seed: u64,
}

impl DgpSpec {
    /// Small panel without trends in the secular components.
    pub fn small(n: usize, tn: usize, q: usize, p: usize, seed: u64) -> Self {
        DgpSpec {
            n,
            tn,
            q,
            p,
            start: Quarter::new(2001, 1),
            n_l1: 1,
            n_l0: 1,
            n_slope: n / 4,
            n_i1: n / 4,
            lambda: None,
            psi: None,
            cycle: None,
            sigma_nu: 0.5,
            sigma_v: 1.0,
            cycle_tilt: 0.3,
            gdp_cycle_loading: 0.8,
            idio_sd: 0.7,
            idio_ar: 0.5,
            unit_root_sd: 0.2,
            i1_noise_sd: 0.1,
            gdp_drift: 0.5,
            eta_sd: 0.005,
            eps_sd: 0.02,
            missing_frac: 0.0,
            covid: None,
            seed,
        }
    }

    /// Panel with the dimensions and set sizes of the euro-area application.
    pub fn large_scale(seed: u64) -> Self {
        DgpSpec { n_l1: 3, n_l0: 9, n_slope: 30, n_i1: 57, ..DgpSpec::small(118, 97, 4, 2, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 1 || self.p < 1 || self.n < self.q + 1 || self.tn < 10 {
            return Err(GapError::invalid("simulation needs q >= 1, p >= 1, n > q and T >= 10"));
        }
        if self.n_l1 < 1 || self.n_l1 + self.n_l0 + self.n_slope > self.n {
            return Err(GapError::invalid("secular set sizes exceed the panel"));
        }
        if self.n_i1 > self.n - self.n_l1 - self.n_l0 {
            return Err(GapError::invalid("too many unit-root idiosyncratic series"));
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return Err(GapError::invalid("missing fraction must be in [0, 1)"));
        }
        if let Some(l) = &self.lambda {
            if l.shape() != (self.n, self.q) {
                return Err(GapError::invalid("loading matrix has the wrong shape"));
            }
        }
        if let Some(psi) = &self.psi {
            if psi.len() != self.q || (psi.norm() - 1.0).abs() > 1e-8 {
                return Err(GapError::invalid("trend loading must be a unit q-vector"));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults of [`DgpSpec::small`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = DgpSpec::small(40, 100, 2, 1, 1);
        let mut covid: Option<CovidSpec> = None;
        let mut preset_large = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GapError::invalid(format!("spec line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = || GapError::invalid(format!("spec: bad value '{v}' for '{k}'"));
            macro_rules! num {
                () => {
                    v.parse().map_err(|_| bad())?
                };
            }
            match k {
                "preset" => match v {
                    "large" => preset_large = true,
                    "small" => {}
                    _ => return Err(bad()),
                },
                "n" => spec.n = num!(),
                "T" | "tn" => spec.tn = num!(),
                "q" => spec.q = num!(),
                "p" => spec.p = num!(),
                "start" => spec.start = v.parse()?,
                "n_l1" => spec.n_l1 = num!(),
                "n_l0" => spec.n_l0 = num!(),
                "n_slope" => spec.n_slope = num!(),
                "n_i1" => spec.n_i1 = num!(),
                "sigma_nu" => spec.sigma_nu = num!(),
                "sigma_v" => spec.sigma_v = num!(),
                "cycle_tilt" => spec.cycle_tilt = num!(),
                "gdp_cycle_loading" => spec.gdp_cycle_loading = num!(),
                "idio_sd" => spec.idio_sd = num!(),
                "idio_ar" => spec.idio_ar = num!(),
                "unit_root_sd" => spec.unit_root_sd = num!(),
                "i1_noise_sd" => spec.i1_noise_sd = num!(),
                "gdp_drift" => spec.gdp_drift = num!(),
                "eta_sd" => spec.eta_sd = num!(),
                "eps_sd" => spec.eps_sd = num!(),
                "missing_frac" => spec.missing_frac = num!(),
                "seed" => spec.seed = num!(),
                "covid" => {
                    let on: bool = num!();
                    covid = if on { Some(covid.unwrap_or_default()) } else { None };
                }
                "covid_start" => covid.get_or_insert_with(CovidSpec::default).start = v.parse()?,
                "covid_g" => {
                    let g: std::result::Result<Vec<f64>, _> = v.split_whitespace().map(str::parse).collect();
                    covid.get_or_insert_with(CovidSpec::default).g = g.map_err(|_| bad())?;
                }
                "covid_gamma_scale" => covid.get_or_insert_with(CovidSpec::default).gamma_scale = num!(),
                "covid_s_peak" => covid.get_or_insert_with(CovidSpec::default).s_peak = num!(),
                "covid_s_decay" => covid.get_or_insert_with(CovidSpec::default).s_decay = num!(),
                _ => return Err(GapError::invalid(format!("spec: unknown key '{k}'"))),
            }
        }
        if preset_large {
            let base = DgpSpec::large_scale(spec.seed);
            let custom = text.lines().any(|l| {
                let k = l.split('=').next().unwrap_or("").trim();
                matches!(k, "n" | "T" | "tn" | "q" | "p" | "n_l1" | "n_l0" | "n_slope" | "n_i1")
            });
            if !custom {
                spec.n = base.n;
                spec.tn = base.tn;
                spec.q = base.q;
                spec.p = base.p;
                spec.n_l1 = base.n_l1;
                spec.n_l0 = base.n_l0;
                spec.n_slope = base.n_slope;
                spec.n_i1 = base.n_i1;
            }
        }
        spec.covid = covid;
        spec.validate()?;
        Ok(spec)
    }
}

/// Ground truth of a simulated panel (data units).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    pub lambda: DMatrix<f64>,
    /// VAR matrices of the factors.
    pub a: Vec<DMatrix<f64>>,
    pub sigma_u: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// Loading of the cycle coordinates (q x (q-1)).
    pub cycle_loading: DMatrix<f64>,
    pub sigma2_nu: f64,
    /// T x q factors.
    pub f: DMatrix<f64>,
    pub tau: Vec<f64>,
    /// T x q cycle.
    pub omega: DMatrix<f64>,
    /// T x n secular components.
    pub d: DMatrix<f64>,
    /// T x n idiosyncratic components.
    pub xi: DMatrix<f64>,
    /// Covid factor path (zero outside the window).
    pub g: Vec<f64>,
    pub gamma: DVector<f64>,
    pub s: Vec<f64>,
    pub gdp: usize,
    pub og: Vec<f64>,
    pub po: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: Panel,
    pub meta: Vec<SeriesMeta>,
    pub truth: SimTruth,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn rotation(dim: usize, angle: f64, radius: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    while k + 1 < dim {
        let (s, c) = angle.sin_cos();
        m[(k, k)] = radius * c;
        m[(k, k + 1)] = -radius * s;
        m[(k + 1, k)] = radius * s;
        m[(k + 1, k + 1)] = radius * c;
        k += 2;
    }
    if k < dim {
        m[(k, k)] = radius;
    }
    m
}

/// Default stable dynamics of the cycle coordinates.
pub fn default_cycle(dim: usize, p: usize) -> Vec<DMatrix<f64>> {
    if p == 1 {
        return vec![rotation(dim, 0.3, 0.85)];
    }
    let mut out = vec![rotation(dim, 0.3, 0.7), DMatrix::identity(dim, dim) * 0.15];
    for _ in 2..p {
        out.push(DMatrix::zeros(dim, dim));
    }
    out
}

/// Orthonormal basis of the complement of a unit vector.
pub fn orthonormal_complement(psi: &DVector<f64>) -> DMatrix<f64> {
    let q = psi.len();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for e in 0..q {
        let mut v = DVector::zeros(q);
        v[e] = 1.0;
        v -= psi * psi.dot(&v);
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        if v.norm() > 1e-8 {
            basis.push(v.normalize());
        }
        if basis.len() + 1 == q {
            break;
        }
    }
    DMatrix::from_fn(q, q - 1, |i, j| basis[j][i])
}

/// Loading of the cycle coordinates: the complement of `psi` tilted towards
/// `psi` by `tilt`, so that the cycle is not orthogonal to the trend loading.
pub fn cycle_loading(psi: &DVector<f64>, tilt: f64) -> DMatrix<f64> {
    let perp = orthonormal_complement(psi);
    let k = perp.ncols();
    &perp + psi * DMatrix::from_element(1, k, tilt)
}

/// Factor VAR implied by `f = psi tau + M x` with a random-walk `tau` and a
/// stable VAR for `x`.
pub fn implied_var(psi: &DVector<f64>, m: &DMatrix<f64>, cycle: &[DMatrix<f64>], sigma2_nu: f64, sigma_v: f64) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let q = psi.len();
    let mut basis = DMatrix::zeros(q, q);
    basis.set_column(0, psi);
    basis.view_mut((0, 1), (q, q - 1)).copy_from(m);
    let inv = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| GapError::invalid("trend and cycle loadings are collinear"))?;
    let a = cycle
        .iter()
        .enumerate()
        .map(|(j, phi)| {
            let mut blk = DMatrix::zeros(q, q);
            if j == 0 {
                blk[(0, 0)] = 1.0;
            }
            blk.view_mut((1, 1), (q - 1, q - 1)).copy_from(phi);
            &basis * blk * &inv
        })
        .collect();
    let mut cov = DMatrix::identity(q, q) * (sigma_v * sigma_v);
    cov[(0, 0)] = sigma2_nu;
    let sigma_u = &basis * cov * basis.transpose();
    Ok((a, sigma_u))
}

/// Simulates a panel and its latent truth; deterministic given the seed.
pub fn simulate_dfm(spec: &DgpSpec) -> Result<Simulation> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, tn, q, p) = (spec.n, spec.tn, spec.q, spec.p);

    let psi = match &spec.psi {
        Some(v) => v.clone(),
        None => {
            let v = DVector::from_fn(q, |_, _| normal(&mut rng).abs() + 0.2);
            v.normalize()
        }
    };
    let perp = cycle_loading(&psi, spec.cycle_tilt);
    let cycle = match &spec.cycle {
        Some(c) => c.clone(),
        None => default_cycle(q - 1, p),
    };
    if cycle.len() != p || cycle.iter().any(|m| m.shape() != (q - 1, q - 1)) {
        return Err(GapError::invalid("cycle dynamics must be p matrices of size q-1"));
    }
    if q > 1 && spectral_radius(&companion(&cycle)) >= 1.0 - 1e-6 {
        return Err(GapError::invalid("cycle dynamics are not stable"));
    }
    let sigma2_nu = spec.sigma_nu * spec.sigma_nu;
    let (a, sigma_u) = implied_var(&psi, &perp, &cycle, sigma2_nu, spec.sigma_v)?;
    let lambda = match &spec.lambda {
        Some(l) => l.clone(),
        None => {
            let mut l = DMatrix::from_fn(n, q, |_, _| normal(&mut rng));
            // the GDP proxy loads on the trend with unit weight
            let comp = orthonormal_complement(&psi);
            let mut row = psi.clone();
            for k in 0..q - 1 {
                row += comp.column(k) * (spec.gdp_cycle_loading * normal(&mut rng));
            }
            l.set_row(0, &row.transpose());
            l
        }
    };

    // Covid volatility path and shift.
    let mut s = vec![1.0; tn];
    let mut g = vec![0.0; tn];
    let mut gamma = DVector::zeros(n);
    if let Some(cv) = &spec.covid {
        let k0 = spec.start.distance(cv.start);
        if k0 < 1 || k0 as usize >= tn {
            return Err(GapError::invalid("Covid window starts outside the sample"));
        }
        let k0 = k0 as usize;
        for (t, v) in s.iter_mut().enumerate().skip(k0) {
            *v = 1.0 + (cv.s_peak - 1.0) * cv.s_decay.powi((t - k0) as i32);
        }
        for (j, &v) in cv.g.iter().enumerate() {
            if k0 + j < tn {
                g[k0 + j] = v;
            }
        }
        gamma = match &cv.gamma {
            Some(gm) if gm.len() == n => gm.clone(),
            Some(_) => return Err(GapError::invalid("Covid loadings have the wrong length")),
            None => {
                // loadings orthogonal to the factor loadings
                let raw = DVector::from_fn(n, |_, _| normal(&mut rng) * cv.gamma_scale);
                let proj = &lambda * crate::linalg::pinv_sym(&(lambda.transpose() * &lambda)) * (lambda.transpose() * &raw);
                let mut gm = raw - proj;
                let nrm = gm.norm();
                if nrm > 0.0 {
                    gm *= cv.gamma_scale * (n as f64).sqrt() / nrm;
                }
                gm
            }
        };
    }

    // Trend and cycle coordinates with a stationary burn-in for the cycle.
    let burn = 200;
    let dim = q - 1;
    let mut x_hist: Vec<DVector<f64>> = vec![DVector::zeros(dim); p];
    for _ in 0..burn {
        let mut x = DVector::from_fn(dim, |_, _| normal(&mut rng) * spec.sigma_v);
        for (j, phi) in cycle.iter().enumerate() {
            x += phi * &x_hist[x_hist.len() - 1 - j];
        }
        x_hist.push(x);
    }
    let mut tau = Vec::with_capacity(tn);
    let mut f = DMatrix::zeros(tn, q);
    let mut omega = DMatrix::zeros(tn, q);
    let mut tau_prev = 0.0;
    for t in 0..tn {
        tau_prev += s[t] * spec.sigma_nu * normal(&mut rng);
        let mut x = DVector::from_fn(dim, |_, _| s[t] * spec.sigma_v * normal(&mut rng));
        for (j, phi) in cycle.iter().enumerate() {
            x += phi * &x_hist[x_hist.len() - 1 - j];
        }
        let w = &perp * &x;
        for i in 0..q {
            omega[(t, i)] = w[i];
            f[(t, i)] = psi[i] * tau_prev + w[i];
        }
        tau.push(tau_prev);
        x_hist.push(x);
    }

    // Series classes.
    let mut trend_class = vec![TrendClass::Constant; n];
    let mut k = 0;
    for _ in 0..spec.n_l1 {
        trend_class[k] = TrendClass::LocalLinear;
        k += 1;
    }
    for _ in 0..spec.n_l0 {
        trend_class[k] = TrendClass::LocalLevel;
        k += 1;
    }
    for _ in 0..spec.n_slope {
        trend_class[k] = TrendClass::DeterministicSlope;
        k += 1;
    }
    let mut candidates: Vec<usize> = (spec.n_l1 + spec.n_l0..n).collect();
    candidates.shuffle(&mut rng);
    let mut unit_root = vec![false; n];
    for &i in candidates.iter().take(spec.n_i1) {
        unit_root[i] = true;
    }

    // Secular and idiosyncratic components.
    let mut d = DMatrix::zeros(tn, n);
    let mut xi = DMatrix::zeros(tn, n);
    for i in 0..n {
        let a0 = normal(&mut rng);
        match trend_class[i] {
            TrendClass::LocalLinear => {
                let mut b = if i == 0 { spec.gdp_drift } else { 0.3 + 0.1 * normal(&mut rng) };
                let mut lvl = a0;
                for t in 0..tn {
                    lvl += b;
                    b += spec.eta_sd * normal(&mut rng);
                    d[(t, i)] = lvl;
                }
            }
            TrendClass::LocalLevel => {
                let mut lvl = a0;
                for t in 0..tn {
                    lvl += spec.eps_sd * normal(&mut rng);
                    d[(t, i)] = lvl;
                }
            }
            TrendClass::DeterministicSlope => {
                let b = 0.2 * normal(&mut rng);
                for t in 0..tn {
                    d[(t, i)] = a0 + b * (t + 1) as f64;
                }
            }
            TrendClass::Constant => {
                for t in 0..tn {
                    d[(t, i)] = a0;
                }
            }
        }
        if unit_root[i] {
            let mut z = 0.0;
            for t in 0..tn {
                z += spec.unit_root_sd * normal(&mut rng);
                xi[(t, i)] = z + spec.i1_noise_sd * normal(&mut rng);
            }
        } else {
            let rho = spec.idio_ar * rng.random::<f64>();
            let sd = spec.idio_sd * (1.0 - rho * rho).sqrt();
            let mut e = spec.idio_sd * normal(&mut rng);
            for t in 0..tn {
                e = rho * e + sd * normal(&mut rng);
                xi[(t, i)] = e;
            }
        }
    }

    let common = &f * lambda.transpose();
    let mut values = DMatrix::from_fn(tn, n, |t, i| d[(t, i)] + common[(t, i)] + gamma[i] * g[t] + xi[(t, i)]);
    if spec.missing_frac > 0.0 {
        for t in 0..tn {
            for i in 1..n {
                if rng.random::<f64>() < spec.missing_frac {
                    values[(t, i)] = f64::NAN;
                }
            }
        }
    }

    let gdp = 0;
    let lp = lambda.row(gdp).dot(&psi.transpose());
    let og: Vec<f64> = (0..tn).map(|t| (0..q).map(|j| lambda[(gdp, j)] * omega[(t, j)]).sum()).collect();
    let po: Vec<f64> = (0..tn).map(|t| d[(t, gdp)] + lp * tau[t]).collect();

    let dates = Quarter::range(spec.start, tn);
    let tickers: Vec<String> = (0..n).map(|i| if i == 0 { "GDP".to_string() } else { format!("S{i:03}") }).collect();
    let panel = Panel::new(dates, tickers.clone(), values)?;
    let meta = (0..n)
        .map(|i| {
            let idio = if unit_root[i] { IdioClass::UnitRoot } else { IdioClass::Stationary };
            SeriesMeta::quarterly(&tickers[i], trend_class[i], idio)
        })
        .collect();

    Ok(Simulation {
        panel,
        meta,
        truth: SimTruth {
            lambda,
            a,
            sigma_u,
            psi,
            cycle_loading: perp,
            sigma2_nu,
            f,
            tau,
            omega,
            d,
            xi,
            g,
            gamma,
            s,
            gdp,
            og,
            po,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let spec = DgpSpec::small(12, 40, 2, 1, 5);
        let a = simulate_dfm(&spec).unwrap();
        let b = simulate_dfm(&spec).unwrap();
        assert_eq!(a.panel.values, b.panel.values);
    }

    #[test]
    fn implied_var_has_one_unit_root() {
        let psi = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let m = cycle_loading(&psi, 0.3);
        let (a, _) = implied_var(&psi, &m, &default_cycle(2, 2), 1.0, 1.0).unwrap();
        let c = companion(&a);
        let eig = c.complex_eigenvalues();
        let units = eig.iter().filter(|z| (z.norm() - 1.0).abs() < 1e-8).count();
        assert_eq!(units, 1);
        assert!(eig.iter().all(|z| z.norm() < 1.0 + 1e-8));
    }

    #[test]
    fn spec_parsing() {
        let s = DgpSpec::parse("n = 20\nT = 60\nq = 3\ncovid = true\ncovid_s_peak = 2.5\n").unwrap();
        assert_eq!((s.n, s.tn, s.q), (20, 60, 3));
        assert_eq!(s.covid.unwrap().s_peak, 2.5);
        assert!(DgpSpec::parse("bogus = 1").is_err());
    }
}
