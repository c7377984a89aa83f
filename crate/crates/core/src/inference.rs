//! Bootstrap confidence bands for potential output and the output gap.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dates::Quarter;
use crate::dfm::{e_step, m_step, DfmFit, DfmParams, EmOptions};
use crate::error::{GapError, Result};
use crate::statespace::SimulationSmoother;
use crate::stats::normal_quantile;
use crate::trend::{output_gap, potential_output, refit_trend_em, TrendCycleFit, TREND_EM_OPTIONS};

/// Mean block length of the residual resampling, in quarters.
pub const MEAN_BLOCK: f64 = 4.0;

/// Stationary (geometric block length) bootstrap of the rows of `resid`.
/// Blocks wrap around the end of the sample and all columns share indices.
pub fn stationary_block_bootstrap<R: Rng + ?Sized>(resid: &DMatrix<f64>, mean_block: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let idx = block_indices(resid.nrows(), mean_block, rng)?;
    Ok(DMatrix::from_fn(resid.nrows(), resid.ncols(), |t, i| resid[(idx[t], i)]))
}

/// Seeded variant of [`stationary_block_bootstrap`].
pub fn stationary_block_bootstrap_seeded(resid: &DMatrix<f64>, mean_block: f64, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stationary_block_bootstrap(resid, mean_block, &mut rng)
}

/// Row indices drawn by the stationary bootstrap.
pub fn block_indices<R: Rng + ?Sized>(tn: usize, mean_block: f64, rng: &mut R) -> Result<Vec<usize>> {
    if tn < 2 {
        return Err(GapError::invalid("block bootstrap needs at least two periods"));
    }
    if !(mean_block >= 1.0) {
        return Err(GapError::invalid(format!("mean block length must be at least 1, got {mean_block}")));
    }
    let p_new = 1.0 / mean_block;
    let mut idx = Vec::with_capacity(tn);
    let mut cur = rng.random_range(0..tn);
    idx.push(cur);
    for _ in 1..tn {
        cur = if rng.random::<f64>() < p_new { rng.random_range(0..tn) } else { (cur + 1) % tn };
        idx.push(cur);
    }
    Ok(idx)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandSeries {
    pub point: Vec<f64>,
    pub sd: Vec<f64>,
    pub lo68: Vec<f64>,
    pub hi68: Vec<f64>,
    pub lo84: Vec<f64>,
    pub hi84: Vec<f64>,
}

impl BandSeries {
    fn from_sd(point: Vec<f64>, sd: Vec<f64>) -> Self {
        let z68 = normal_quantile(0.84);
        let z84 = normal_quantile(0.92);
        let band = |z: f64, sign: f64| point.iter().zip(&sd).map(|(p, s)| p + sign * z * s).collect();
        BandSeries {
            lo68: band(z68, -1.0),
            hi68: band(z68, 1.0),
            lo84: band(z84, -1.0),
            hi84: band(z84, 1.0),
            point,
            sd,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bands {
    pub dates: Vec<Quarter>,
    pub og: BandSeries,
    pub po: BandSeries,
    /// Requested replications.
    pub b: usize,
    pub failures: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapOptions {
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
    pub mean_block: f64,
    pub trend_em: EmOptions,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { reps: 500, seed: 1, jobs: 0, mean_block: MEAN_BLOCK, trend_em: TREND_EM_OPTIONS }
    }
}

fn secular_from(params: &DfmParams, states: &DMatrix<f64>) -> DMatrix<f64> {
    let lay = params.layout();
    DMatrix::from_fn(states.nrows(), params.n(), |t, i| {
        params.deterministic(i, t) + lay.level[i].map_or(0.0, |k| states[(t, k)])
    })
}

struct Replicate {
    og: Vec<f64>,
    po: Vec<f64>,
}

struct Shared<'a> {
    dfm: &'a DfmFit,
    tc: &'a TrendCycleFit,
    gdp: usize,
    sim: SimulationSmoother<'a>,
    resid: DMatrix<f64>,
    mask: DMatrix<bool>,
    intercepts: DMatrix<f64>,
    og: Vec<f64>,
    po: Vec<f64>,
    opts: BootstrapOptions,
}

impl Shared<'_> {
    fn replicate(&self, b: usize) -> Result<Replicate> {
        let dfm = self.dfm;
        let (tn, n) = (dfm.nobs(), dfm.params.n());
        let q = dfm.params.q;
        let model = dfm.state_space();
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        rng.set_stream(b as u64);

        let draw = self.sim.draw(&mut rng);
        let tilde = DMatrix::from_fn(tn, model.nstates(), |t, j| draw[t + 1][j]);
        let eps = stationary_block_bootstrap(&self.resid, self.opts.mean_block, &mut rng)?;
        let zt = &tilde * model.z.transpose();
        let y = DMatrix::from_fn(tn, n, |t, i| {
            if self.mask[(t, i)] {
                self.intercepts[(t, i)] + zt[(t, i)] + eps[(t, i)]
            } else {
                f64::NAN
            }
        });

        let s = &dfm.covid.s;
        let bp = Some(dfm.breakpoint);
        let (_, sm0) = e_step(&dfm.params, &y, s, bp)?;
        let params_b = m_step(&dfm.params, &y, &sm0, s)?;
        let (_, sm_b) = e_step(&params_b, &y, s, bp)?;
        let est = sm_b.means();

        let f_hat = dfm.factors();
        let f_bar = &f_hat - tilde.columns(0, q) + est.columns(0, q);
        let d_bar = dfm.secular() - secular_from(&dfm.params, &tilde) + secular_from(&params_b, &est);
        let tc_b = refit_trend_em(&f_bar, self.tc, &self.opts.trend_em)?;

        let i = self.gdp;
        let lam = params_b.lambda.row(i);
        let lp: f64 = (0..q).map(|j| lam[j] * tc_b.psi[j]).sum();
        let (loc, sc) = (dfm.panel.locations[i], dfm.panel.scales[i]);
        let og = (0..tn).map(|t| sc * (0..q).map(|j| lam[j] * tc_b.omega[(t, j)]).sum::<f64>()).collect::<Vec<_>>();
        let po = (0..tn).map(|t| loc + sc * (d_bar[(t, i)] + lp * tc_b.tau[t])).collect::<Vec<_>>();
        if og.iter().chain(&po).any(|v| !v.is_finite()) {
            return Err(GapError::NonFinite("bootstrap replicate".into()));
        }
        Ok(Replicate { og, po })
    }
}

/// Bootstrap bands for the gap and potential output of series `gdp`.
///
/// Each replicate draws states from the simulation smoother, resamples the
/// measurement residuals in blocks, regenerates the (Covid-purged) data,
/// re-estimates with the Covid factor and volatility held fixed, recentres
/// the states on the point estimate and re-runs the trend extraction.
pub fn bootstrap_bands(dfm: &DfmFit, tc: &TrendCycleFit, gdp: usize, opts: &BootstrapOptions) -> Result<Bands> {
    if opts.reps < 2 {
        return Err(GapError::invalid("bootstrap needs at least two replications"));
    }
    if gdp >= dfm.params.n() {
        return Err(GapError::invalid(format!("series index {gdp} out of range")));
    }
    let (tn, n) = (dfm.nobs(), dfm.params.n());
    let model = dfm.state_space();
    let purged = dfm.purged_values();
    let mask = dfm.panel.mask();
    let resid = dfm.residual().map(|v| if v.is_finite() { v } else { 0.0 });
    let intercepts = DMatrix::from_fn(tn, n, |t, i| model.intercept(i, t));
    let sim = SimulationSmoother::new(&model, &purged)?;
    let shared = Shared {
        dfm,
        tc,
        gdp,
        sim,
        resid,
        mask,
        intercepts,
        og: output_gap(dfm, tc, gdp),
        po: potential_output(dfm, tc, gdp),
        opts: *opts,
    };

    let run = || -> Vec<Option<Replicate>> {
        (0..opts.reps).into_par_iter().map(|b| shared.replicate(b).ok()).collect()
    };
    let results = if opts.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| GapError::invalid(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };

    let failures = results.iter().filter(|r| r.is_none()).count();
    if failures * 10 > opts.reps {
        return Err(GapError::Numerical(format!("{failures} of {} bootstrap replicates failed", opts.reps)));
    }
    let ok: Vec<&Replicate> = results.iter().flatten().collect();
    let sd_of = |get: &dyn Fn(&Replicate) -> &Vec<f64>, point: &[f64]| -> Vec<f64> {
        (0..tn)
            .map(|t| {
                let dev: Vec<f64> = ok.iter().map(|r| get(r)[t] - point[t]).collect();
                let m = dev.iter().sum::<f64>() / dev.len() as f64;
                (dev.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (dev.len().max(2) - 1) as f64).sqrt()
            })
            .collect()
    };
    let og_sd = sd_of(&|r| &r.og, &shared.og);
    let po_sd = sd_of(&|r| &r.po, &shared.po);
    Ok(Bands {
        dates: dfm.panel.dates.clone(),
        og: BandSeries::from_sd(shared.og.clone(), og_sd),
        po: BandSeries::from_sd(shared.po.clone(), po_sd),
        b: opts.reps,
        failures,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_blocks_rotate_rows() {
        let x = DMatrix::from_fn(20, 2, |t, i| (t * 10 + i) as f64);
        let r = stationary_block_bootstrap_seeded(&x, 1e6, 3).unwrap();
        let k = (0..20).find(|&k| r[(0, 0)] == x[(k, 0)]).unwrap();
        for t in 0..20 {
            assert_eq!(r[(t, 0)], x[((k + t) % 20, 0)]);
            assert_eq!(r[(t, 1)], x[((k + t) % 20, 1)]);
        }
    }

    #[test]
    fn resampling_is_deterministic() {
        let x = DMatrix::from_fn(30, 3, |t, i| ((t * 7 + i * 3) % 11) as f64);
        let a = stationary_block_bootstrap_seeded(&x, 4.0, 9).unwrap();
        let b = stationary_block_bootstrap_seeded(&x, 4.0, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_short_and_bad_block() {
        let x = DMatrix::from_element(1, 1, 0.0);
        assert!(stationary_block_bootstrap_seeded(&x, 4.0, 1).is_err());
        let x = DMatrix::from_element(5, 1, 0.0);
        assert!(stationary_block_bootstrap_seeded(&x, 0.5, 1).is_err());
    }

    #[test]
    fn bands_nest() {
        let b = BandSeries::from_sd(vec![0.0, 1.0], vec![1.0, 2.0]);
        for t in 0..2 {
            assert!(b.lo84[t] < b.lo68[t] && b.hi68[t] < b.hi84[t]);
            assert!((b.hi68[t] - b.point[t] - (b.point[t] - b.lo68[t])).abs() < 1e-12);
        }
    }
}
