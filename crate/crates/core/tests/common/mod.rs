#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use potgap::statespace::StateSpaceModel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn rand_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| randn(r))
}

pub fn rand_spd(r: &mut ChaCha8Rng, k: usize, ridge: f64) -> DMatrix<f64> {
    let a = rand_mat(r, k, k);
    &a * a.transpose() / k as f64 + DMatrix::identity(k, k) * ridge
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Random model with every feature switched on: intercepts, drift,
/// selection matrix, partially scaled disturbances and a volatility path.
pub fn random_model(r: &mut ChaCha8Rng, m: usize, n: usize, tn: usize) -> StateSpaceModel {
    let rdim = 1 + r.random_range(0..m);
    let mut t_mat = rand_mat(r, m, m) * 0.5;
    t_mat[(0, 0)] += 0.3;
    StateSpaceModel {
        z: rand_mat(r, n, m),
        d: rand_mat(r, n, tn),
        h: DVector::from_fn(n, |_, _| 0.2 + r.random::<f64>()),
        t_mat,
        c: rand_mat(r, m, 1).column(0).into_owned(),
        rsel: rand_mat(r, m, rdim),
        q: rand_spd(r, rdim, 0.1),
        scaled: (0..rdim).map(|k| k % 2 == 0).collect(),
        s: (0..tn).map(|_| 0.5 + 2.0 * r.random::<f64>()).collect(),
        a0: rand_mat(r, m, 1).column(0).into_owned(),
        p0: rand_spd(r, m, 0.2),
    }
}

/// Random data with roughly a fifth of the cells missing (never a full row).
pub fn random_data(r: &mut ChaCha8Rng, tn: usize, n: usize) -> DMatrix<f64> {
    let mut y = rand_mat(r, tn, n) * 2.0;
    for t in 0..tn {
        for i in 0..n {
            if i > 0 && r.random::<f64>() < 0.2 {
                y[(t, i)] = f64::NAN;
            }
        }
    }
    y
}

/// Moments of the joint Gaussian of all states (periods 0..=T) and the
/// observed cells, assembled explicitly.
pub struct DenseOracle {
    pub m: usize,
    pub tn: usize,
    mu_x: DVector<f64>,
    sxx: DMatrix<f64>,
    /// (t, i) of each observed cell, in row-major order.
    pub cells: Vec<(usize, usize)>,
    mu_y: DVector<f64>,
    syy: DMatrix<f64>,
    sxy: DMatrix<f64>,
    yv: DVector<f64>,
}

impl DenseOracle {
    pub fn new(model: &StateSpaceModel, y: &DMatrix<f64>) -> Self {
        let m = model.t_mat.nrows();
        let tn = y.nrows();
        let n = y.ncols();
        let dim = m * (tn + 1);
        // States as an affine map of (a0 noise, eta_1..eta_T): x = mu + L w.
        let r = model.q.nrows();
        let wdim = m + r * tn;
        let mut lmap = DMatrix::zeros(dim, wdim);
        let mut mu = DVector::zeros(dim);
        mu.rows_mut(0, m).copy_from(&model.a0);
        lmap.view_mut((0, 0), (m, m)).copy_from(&DMatrix::<f64>::identity(m, m));
        for t in 1..=tn {
            let prev_mu = mu.rows((t - 1) * m, m).into_owned();
            mu.rows_mut(t * m, m).copy_from(&(&model.t_mat * prev_mu + &model.c));
            let prev_l = lmap.rows((t - 1) * m, m).into_owned();
            let mut row = &model.t_mat * prev_l;
            let s = model.s.get(t - 1).copied().unwrap_or(1.0);
            let sel = DMatrix::from_fn(m, r, |a, k| model.rsel[(a, k)] * if model.scaled[k] { s } else { 1.0 });
            row.view_mut((0, m + (t - 1) * r), (m, r)).copy_from(&sel);
            lmap.rows_mut(t * m, m).copy_from(&row);
        }
        let mut wcov = DMatrix::zeros(wdim, wdim);
        wcov.view_mut((0, 0), (m, m)).copy_from(&model.p0);
        for t in 0..tn {
            wcov.view_mut((m + t * r, m + t * r), (r, r)).copy_from(&model.q);
        }
        let sxx = &lmap * &wcov * lmap.transpose();

        let cells: Vec<(usize, usize)> =
            (0..tn).flat_map(|t| (0..n).map(move |i| (t, i))).filter(|&(t, i)| y[(t, i)].is_finite()).collect();
        let k = cells.len();
        let mut zsel = DMatrix::zeros(k, dim);
        let mut mu_y = DVector::zeros(k);
        let mut yv = DVector::zeros(k);
        let mut hdiag = DVector::zeros(k);
        for (c, &(t, i)) in cells.iter().enumerate() {
            for j in 0..m {
                zsel[(c, (t + 1) * m + j)] = model.z[(i, j)];
            }
            let d = if model.d.ncols() == 1 { model.d[(i, 0)] } else { model.d[(i, t)] };
            mu_y[c] = d + (zsel.row(c) * &mu)[0];
            yv[c] = y[(t, i)];
            hdiag[c] = model.h[i];
        }
        let syy = &zsel * &sxx * zsel.transpose() + DMatrix::from_diagonal(&hdiag);
        let sxy = &sxx * zsel.transpose();
        DenseOracle { m, tn, mu_x: mu, sxx, cells, mu_y, syy, sxy, yv }
    }

    /// Conditional mean and covariance of all states given the observed
    /// cells with `t < upto`.
    pub fn conditional(&self, upto: usize) -> (DVector<f64>, DMatrix<f64>) {
        let idx: Vec<usize> = (0..self.cells.len()).filter(|&c| self.cells[c].0 < upto).collect();
        if idx.is_empty() {
            return (self.mu_x.clone(), self.sxx.clone());
        }
        let syy = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.syy[(idx[a], idx[b])]);
        let sxy = DMatrix::from_fn(self.sxx.nrows(), idx.len(), |a, b| self.sxy[(a, idx[b])]);
        let resid = DVector::from_fn(idx.len(), |a, _| self.yv[idx[a]] - self.mu_y[idx[a]]);
        let inv = syy.cholesky().expect("oracle covariance is positive definite").inverse();
        let mean = &self.mu_x + &sxy * &inv * resid;
        let cov = &self.sxx - &sxy * &inv * sxy.transpose();
        (mean, cov)
    }

    pub fn block(&self, cov: &DMatrix<f64>, t: usize, s: usize) -> DMatrix<f64> {
        cov.view((t * self.m, s * self.m), (self.m, self.m)).into_owned()
    }

    pub fn mean_at(&self, mean: &DVector<f64>, t: usize) -> DVector<f64> {
        mean.rows(t * self.m, self.m).into_owned()
    }

    pub fn loglik(&self) -> f64 {
        let k = self.cells.len() as f64;
        let ch = self.syy.clone().cholesky().unwrap();
        let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let resid = &self.yv - &self.mu_y;
        let quad = resid.dot(&ch.solve(&resid));
        -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
    }
}

/// Largest deviation between the smoother/filter outputs and the dense
/// oracle over means, covariances, lag-one covariances and filtered means.
pub fn oracle_gap(model: &StateSpaceModel, y: &DMatrix<f64>) -> f64 {
    use potgap::statespace::filter_and_smooth;
    let (filt, sm) = filter_and_smooth(model, y).unwrap();
    let oracle = DenseOracle::new(model, y);
    let tn = y.nrows();
    let (mean, cov) = oracle.conditional(tn);
    let mut worst: f64 = 0.0;
    for t in 0..=tn {
        let dm = (&sm.a_smooth[t] - oracle.mean_at(&mean, t)).abs().max();
        let dp = max_abs(&sm.p_smooth[t], &oracle.block(&cov, t, t));
        worst = worst.max(dm).max(dp);
        if t >= 1 {
            worst = worst.max(max_abs(&sm.p_lag[t], &oracle.block(&cov, t, t - 1)));
            let (fm, fc) = oracle.conditional(t);
            worst = worst.max((&filt.a_filt[t] - oracle.mean_at(&fm, t)).abs().max());
            worst = worst.max(max_abs(&filt.p_filt[t], &oracle.block(&fc, t, t)));
        }
    }
    worst.max((filt.loglik - oracle.loglik()).abs())
}

/// Ratio of output to input periodogram mass over the Fourier bins with
/// angular frequency in `[lo, hi]`.
pub fn empirical_gain(input: &[f64], output: &[f64], lo: f64, hi: f64) -> f64 {
    let spec = |x: &[f64]| {
        use rustfft::num_complex::Complex;
        let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
        rustfft::FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
        buf.iter().map(|c| c.norm_sqr()).collect::<Vec<f64>>()
    };
    let (si, so) = (spec(input), spec(output));
    let n = input.len();
    let (mut num, mut den) = (0.0, 0.0);
    for k in 1..n / 2 {
        let w = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        if w >= lo && w <= hi {
            num += so[k];
            den += si[k];
        }
    }
    num / den
}

/// Average of `f` over the same Fourier bins, weighted by the periodogram
/// of `input`: the power ratio a filter with squared gain `f` would produce.
pub fn weighted_over_bins(input: &[f64], lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    use rustfft::num_complex::Complex;
    let n = input.len();
    let mut buf: Vec<Complex<f64>> = input.iter().map(|v| Complex::new(*v, 0.0)).collect();
    rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 1..n / 2 {
        let w = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        if w >= lo && w <= hi {
            num += f(w) * buf[k].norm_sqr();
            den += buf[k].norm_sqr();
        }
    }
    num / den
}

/// Mean of `f` over the same Fourier bins.
pub fn mean_over_bins(n: usize, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let ws: Vec<f64> = (1..n / 2)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / n as f64)
        .filter(|w| *w >= lo && *w <= hi)
        .collect();
    ws.iter().map(|w| f(*w)).sum::<f64>() / ws.len() as f64
}

/// Trend of the HP filter from the dense normal equations.
pub fn hp_dense(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let d = DMatrix::from_fn(n - 2, n, |r, c| match c as isize - r as isize {
        0 | 2 => 1.0,
        1 => -2.0,
        _ => 0.0,
    });
    let a = DMatrix::identity(n, n) + d.transpose() * d * lambda;
    let b = DVector::from_column_slice(y);
    a.lu().solve(&b).unwrap().iter().copied().collect()
}
