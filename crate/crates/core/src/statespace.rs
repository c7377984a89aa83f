//! Linear Gaussian state-space engine.
//!
//! Model, with `t = 1..T` and the initial state at `t = 0`:
//!
//! ```text
//! y_t     = d_t + Z a_t + eps_t,            eps_t ~ N(0, H),  H diagonal
//! a_t     = c + T a_{t-1} + R eta_t,        eta_t ~ N(0, S_t Q S_t)
//! a_0     ~ N(a0, P0)
//! ```
//!
//! `S_t` is diagonal with `s_t` on the disturbances flagged as scaled and
//! one elsewhere. Observations are processed one at a time, so missing
//! cells (NaN) are simply skipped.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::linalg::{pinv_sym, symmetrize};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateSpaceModel {
    /// n x m measurement map.
    pub z: DMatrix<f64>,
    /// n x 1 (time-invariant) or n x T measurement intercepts.
    pub d: DMatrix<f64>,
    /// Diagonal of the measurement noise covariance.
    pub h: DVector<f64>,
    /// m x m transition map.
    pub t_mat: DMatrix<f64>,
    pub c: DVector<f64>,
    /// m x r disturbance selection.
    pub rsel: DMatrix<f64>,
    /// r x r disturbance covariance.
    pub q: DMatrix<f64>,
    /// Disturbances whose standard deviation is multiplied by `s_t`.
    pub scaled: Vec<bool>,
    /// Per-period volatility scale; empty means one everywhere.
    pub s: Vec<f64>,
    pub a0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl StateSpaceModel {
    /// Model with `c = 0`, `d = 0`, `R = I`, no volatility scaling.
    pub fn basic(
        z: DMatrix<f64>,
        h: DVector<f64>,
        t_mat: DMatrix<f64>,
        q: DMatrix<f64>,
        a0: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Self {
        let (n, m) = z.shape();
        StateSpaceModel {
            d: DMatrix::zeros(n, 1),
            c: DVector::zeros(m),
            rsel: DMatrix::identity(m, m),
            scaled: vec![false; m],
            s: Vec::new(),
            z,
            h,
            t_mat,
            q,
            a0,
            p0,
        }
    }

    pub fn nstates(&self) -> usize {
        self.t_mat.nrows()
    }

    pub fn nseries(&self) -> usize {
        self.z.nrows()
    }

    pub fn intercept(&self, i: usize, t: usize) -> f64 {
        if self.d.ncols() == 1 {
            self.d[(i, 0)]
        } else {
            self.d[(i, t)]
        }
    }

    pub fn scale(&self, t: usize) -> f64 {
        self.s.get(t).copied().unwrap_or(1.0)
    }

    /// Covariance of the scaled disturbance vector at period `t`.
    pub fn disturbance_cov(&self, t: usize) -> DMatrix<f64> {
        let s = self.scale(t);
        let r = self.q.nrows();
        DMatrix::from_fn(r, r, |i, j| {
            let si = if self.scaled[i] { s } else { 1.0 };
            let sj = if self.scaled[j] { s } else { 1.0 };
            self.q[(i, j)] * si * sj
        })
    }

    fn validate(&self, y: &DMatrix<f64>) -> Result<()> {
        let (n, m) = self.z.shape();
        let r = self.q.nrows();
        let tn = y.nrows();
        let ok = y.ncols() == n
            && self.h.len() == n
            && self.t_mat.shape() == (m, m)
            && self.c.len() == m
            && self.rsel.shape() == (m, r)
            && self.q.shape() == (r, r)
            && self.scaled.len() == r
            && self.a0.len() == m
            && self.p0.shape() == (m, m)
            && self.d.nrows() == n
            && (self.d.ncols() == 1 || self.d.ncols() >= tn)
            && (self.s.is_empty() || self.s.len() >= tn);
        if !ok {
            return Err(GapError::invalid("state-space dimensions are inconsistent"));
        }
        let finite = |x: &[f64]| x.iter().all(|v| v.is_finite());
        if !(finite(self.z.as_slice())
            && finite(self.d.as_slice())
            && finite(self.h.as_slice())
            && finite(self.t_mat.as_slice())
            && finite(self.c.as_slice())
            && finite(self.q.as_slice())
            && finite(self.a0.as_slice())
            && finite(self.p0.as_slice())
            && finite(&self.s))
        {
            return Err(GapError::NonFinite("state-space system matrices".into()));
        }
        if y.iter().any(|v| v.is_infinite()) {
            return Err(GapError::NonFinite("observations".into()));
        }
        if self.h.iter().any(|&v| v < 0.0) {
            return Err(GapError::invalid("measurement variances must be nonnegative"));
        }
        Ok(())
    }
}

/// Sparse left multiplication by a fixed matrix.
#[derive(Debug, Clone)]
pub(crate) struct SparseMat {
    rows: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMat {
    pub(crate) fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        SparseMat { rows: m.nrows(), entries }
    }

    pub(crate) fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, x.ncols());
        for j in 0..x.ncols() {
            let xc = x.column(j);
            let mut oc = out.column_mut(j);
            for &(i, k, v) in &self.entries {
                oc[i] += v * xc[k];
            }
        }
        out
    }

    pub(crate) fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.rows);
        for &(i, k, v) in &self.entries {
            out[i] += v * x[k];
        }
        out
    }

    /// `M P M'` for symmetric `P`.
    pub(crate) fn sandwich(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let mp = self.mul_mat(p);
        self.mul_mat(&mp.transpose())
    }
}

/// Precomputed pieces of `R S_t Q S_t R'` as `m0 + s*m1 + s^2*m2`.
struct StateNoise {
    m0: DMatrix<f64>,
    m1: DMatrix<f64>,
    m2: DMatrix<f64>,
}

impl StateNoise {
    fn new(model: &StateSpaceModel) -> Self {
        let r = model.q.nrows();
        let part = |want: (bool, bool)| {
            let q = DMatrix::from_fn(r, r, |i, j| {
                let pair = (model.scaled[i], model.scaled[j]);
                let hit = pair == want || (want.0 != want.1 && pair == (want.1, want.0));
                if hit {
                    model.q[(i, j)]
                } else {
                    0.0
                }
            });
            &model.rsel * q * model.rsel.transpose()
        };
        StateNoise { m0: part((false, false)), m1: part((true, false)), m2: part((true, true)) }
    }

    fn at(&self, s: f64) -> DMatrix<f64> {
        if s == 1.0 {
            &self.m0 + &self.m1 + &self.m2
        } else {
            &self.m0 + &self.m1 * s + &self.m2 * (s * s)
        }
    }
}

/// One scalar measurement update applied during filtering.
#[derive(Debug, Clone)]
pub struct UpdateStep {
    pub series: usize,
    pub gain: DVector<f64>,
}

/// Forward-pass output. Index 0 of the `*_filt` vectors is the initial
/// state; index `t` (1..=T) is period t. `*_pred[t]` is the one-step
/// prediction for period t (index 0 unused and equal to the initial state).
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub a_pred: Vec<DVector<f64>>,
    pub p_pred: Vec<DMatrix<f64>>,
    pub a_filt: Vec<DVector<f64>>,
    pub p_filt: Vec<DMatrix<f64>>,
    pub loglik: f64,
    /// Number of observations that entered the likelihood.
    pub nobs: usize,
    pub steps: Vec<Vec<UpdateStep>>,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.a_filt.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Smoothed moments. Vectors are indexed like [`FilterOutput`]: index 0 is
/// the initial state and index t is period t. `p_lag[t]` is
/// `Cov(a_t, a_{t-1} | Y)` for t >= 1 (index 0 is zero).
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub a_smooth: Vec<DVector<f64>>,
    pub p_smooth: Vec<DMatrix<f64>>,
    pub p_lag: Vec<DMatrix<f64>>,
    pub loglik: f64,
    pub gains: Vec<DMatrix<f64>>,
}

impl SmootherOutput {
    pub fn len(&self) -> usize {
        self.a_smooth.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smoothed means of periods 1..=T as a T x m matrix.
    pub fn means(&self) -> DMatrix<f64> {
        let tn = self.len();
        let m = self.a_smooth[0].len();
        DMatrix::from_fn(tn, m, |t, j| self.a_smooth[t + 1][j])
    }
}

fn sparse_rows(z: &DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    (0..z.nrows())
        .map(|i| (0..z.ncols()).filter(|&j| z[(i, j)] != 0.0).map(|j| (j, z[(i, j)])).collect())
        .collect()
}

/// Kalman filter; NaN cells are treated as missing.
pub fn kalman_filter(model: &StateSpaceModel, y: &DMatrix<f64>) -> Result<FilterOutput> {
    filter_impl(model, y, |t, i| y[(t, i)].is_finite())
}

/// Kalman filter with an explicit observation mask (true = observed).
pub fn kalman_filter_masked(model: &StateSpaceModel, y: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<FilterOutput> {
    if mask.shape() != y.shape() {
        return Err(GapError::invalid("mask shape differs from data"));
    }
    for (v, &o) in y.iter().zip(mask.iter()) {
        if o && !v.is_finite() {
            return Err(GapError::NonFinite("observed cell".into()));
        }
    }
    filter_impl(model, y, |t, i| mask[(t, i)])
}

fn filter_impl(model: &StateSpaceModel, y: &DMatrix<f64>, observed: impl Fn(usize, usize) -> bool) -> Result<FilterOutput> {
    model.validate(y)?;
    let tn = y.nrows();
    let n = model.nseries();
    let tsp = SparseMat::from_dense(&model.t_mat);
    let noise = StateNoise::new(model);
    let zrows = sparse_rows(&model.z);

    let mut out = FilterOutput {
        a_pred: Vec::with_capacity(tn + 1),
        p_pred: Vec::with_capacity(tn + 1),
        a_filt: Vec::with_capacity(tn + 1),
        p_filt: Vec::with_capacity(tn + 1),
        loglik: 0.0,
        nobs: 0,
        steps: Vec::with_capacity(tn + 1),
    };
    out.a_pred.push(model.a0.clone());
    out.p_pred.push(model.p0.clone());
    out.a_filt.push(model.a0.clone());
    out.p_filt.push(model.p0.clone());
    out.steps.push(Vec::new());

    for t in 0..tn {
        let prev_a = &out.a_filt[t];
        let prev_p = &out.p_filt[t];
        let mut a = tsp.mul_vec(prev_a) + &model.c;
        let mut p = tsp.sandwich(prev_p) + noise.at(model.scale(t));
        symmetrize(&mut p);
        out.a_pred.push(a.clone());
        out.p_pred.push(p.clone());

        let mut steps = Vec::new();
        for i in 0..n {
            if !observed(t, i) {
                continue;
            }
            let yi = y[(t, i)];
            let zr = &zrows[i];
            let mut u = DVector::zeros(a.len());
            let mut fit = model.intercept(i, t);
            for &(j, v) in zr {
                u.axpy(v, &p.column(j), 1.0);
                fit += v * a[j];
            }
            let v = yi - fit;
            let zpz: f64 = zr.iter().map(|&(j, w)| w * u[j]).sum();
            let f = zpz + model.h[i];
            if !(f > 1e-300) {
                if v.abs() <= 1e-9 * (1.0 + yi.abs()) {
                    continue;
                }
                return Err(GapError::Singular(format!(
                    "innovation variance at period {} series {}",
                    t + 1,
                    i
                )));
            }
            let k = &u / f;
            a.axpy(v, &k, 1.0);
            p.ger(-1.0 / f, &u, &u, 1.0);
            out.loglik -= 0.5 * (LN_2PI + f.ln() + v * v / f);
            out.nobs += 1;
            steps.push(UpdateStep { series: i, gain: k });
        }
        symmetrize(&mut p);
        out.a_filt.push(a);
        out.p_filt.push(p);
        out.steps.push(steps);
    }
    Ok(out)
}

/// Smoother gain `J = P_filt T' P_pred^{-1}`.
fn smoother_gain(tsp: &SparseMat, p_filt: &DMatrix<f64>, p_pred: &DMatrix<f64>) -> DMatrix<f64> {
    let g = tsp.mul_mat(p_filt);
    if g.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(g.ncols(), g.nrows());
    }
    match p_pred.clone().cholesky() {
        Some(ch) => ch.solve(&g).transpose(),
        None => (pinv_sym(p_pred) * g).transpose(),
    }
}

/// Rauch-Tung-Striebel smoother with lag-one covariances.
pub fn kalman_smoother(model: &StateSpaceModel, filt: &FilterOutput) -> Result<SmootherOutput> {
    smoother_impl(model, filt, None)
}

/// Smoother whose backward pass is restarted from the filtered moments at
/// period `breakpoint - 1`, where `breakpoint` is the 0-based row of the
/// first post-break observation (so periods `< breakpoint` only use
/// information up to that row). `breakpoint == T` is the plain smoother.
pub fn smoother_with_reset(model: &StateSpaceModel, filt: &FilterOutput, breakpoint: usize) -> Result<SmootherOutput> {
    let tn = filt.len();
    if breakpoint == 0 || breakpoint > tn {
        return Err(GapError::invalid(format!(
            "breakpoint {breakpoint} outside the sample 1..={tn}"
        )));
    }
    smoother_impl(model, filt, Some(breakpoint))
}

fn smoother_impl(model: &StateSpaceModel, filt: &FilterOutput, reset: Option<usize>) -> Result<SmootherOutput> {
    let tn = filt.len();
    let m = model.nstates();
    let tsp = SparseMat::from_dense(&model.t_mat);
    let mut a_s = vec![DVector::zeros(m); tn + 1];
    let mut p_s = vec![DMatrix::zeros(m, m); tn + 1];
    let mut p_lag = vec![DMatrix::zeros(m, m); tn + 1];
    let mut gains = vec![DMatrix::zeros(m, m); tn + 1];
    a_s[tn] = filt.a_filt[tn].clone();
    p_s[tn] = filt.p_filt[tn].clone();
    for k in (0..tn).rev() {
        let j = smoother_gain(&tsp, &filt.p_filt[k], &filt.p_pred[k + 1]);
        let da = &a_s[k + 1] - &filt.a_pred[k + 1];
        let dp = &p_s[k + 1] - &filt.p_pred[k + 1];
        p_lag[k + 1] = &p_s[k + 1] * j.transpose();
        if reset == Some(k) {
            a_s[k] = filt.a_filt[k].clone();
            p_s[k] = filt.p_filt[k].clone();
        } else {
            a_s[k] = &filt.a_filt[k] + &j * da;
            let mut p = &filt.p_filt[k] + &j * dp * j.transpose();
            symmetrize(&mut p);
            p_s[k] = p;
        }
        gains[k] = j;
    }
    if let Some(b) = reset {
        // the pair (b+1, b) straddles the restart: no cross information
        if b < tn {
            p_lag[b + 1] = &p_s[b + 1] * gains[b].transpose();
        }
    }
    Ok(SmootherOutput { a_smooth: a_s, p_smooth: p_s, p_lag, loglik: filt.loglik, gains })
}

/// Filter and plain smoother in one call.
pub fn filter_and_smooth(model: &StateSpaceModel, y: &DMatrix<f64>) -> Result<(FilterOutput, SmootherOutput)> {
    let f = kalman_filter(model, y)?;
    let s = kalman_smoother(model, &f)?;
    Ok((f, s))
}

/// Filter plus truncated smoother. `breakpoint` is the 0-based row of the
/// first post-break period.
pub fn truncated_smoother(model: &StateSpaceModel, y: &DMatrix<f64>, breakpoint: usize) -> Result<SmootherOutput> {
    let f = kalman_filter(model, y)?;
    smoother_with_reset(model, &f, breakpoint)
}

/// Smoothed means for new data with the same missing pattern, reusing the
/// gains of an earlier filter/smoother pass.
pub fn smooth_means_with(model: &StateSpaceModel, filt: &FilterOutput, sm: &SmootherOutput, y: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let tn = filt.len();
    let tsp = SparseMat::from_dense(&model.t_mat);
    let zrows = sparse_rows(&model.z);
    let mut a_pred = Vec::with_capacity(tn + 1);
    let mut a_filt = Vec::with_capacity(tn + 1);
    a_pred.push(model.a0.clone());
    a_filt.push(model.a0.clone());
    for t in 0..tn {
        let mut a = tsp.mul_vec(&a_filt[t]) + &model.c;
        a_pred.push(a.clone());
        for st in &filt.steps[t + 1] {
            let i = st.series;
            let mut fit = model.intercept(i, t);
            for &(j, v) in &zrows[i] {
                fit += v * a[j];
            }
            let v = y[(t, i)] - fit;
            a.axpy(v, &st.gain, 1.0);
        }
        a_filt.push(a);
    }
    let mut a_s = vec![DVector::zeros(model.nstates()); tn + 1];
    a_s[tn] = a_filt[tn].clone();
    for k in (0..tn).rev() {
        a_s[k] = &a_filt[k] + &sm.gains[k] * (&a_s[k + 1] - &a_pred[k + 1]);
    }
    a_s
}

/// Symmetric square root factor `L` with `L L' = M` for a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.l();
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let n = m.nrows();
    let mut out = eig.eigenvectors.clone();
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0).sqrt();
        out.column_mut(k).scale_mut(lam);
    }
    out
}

fn std_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Unconditional draw of states (periods 0..=T) and observations from the
/// model. Observations are produced only where `observed` is true.
pub fn simulate_model<R: Rng + ?Sized>(
    model: &StateSpaceModel,
    tn: usize,
    observed: &dyn Fn(usize, usize) -> bool,
    rng: &mut R,
) -> (Vec<DVector<f64>>, DMatrix<f64>) {
    let m = model.nstates();
    let n = model.nseries();
    let r = model.q.nrows();
    let tsp = SparseMat::from_dense(&model.t_mat);
    let lq = psd_sqrt(&model.q);
    let lp = psd_sqrt(&model.p0);
    let mut states = Vec::with_capacity(tn + 1);
    states.push(&model.a0 + &lp * std_normal_vec(rng, m));
    let mut y = DMatrix::from_element(tn, n, f64::NAN);
    for t in 0..tn {
        let mut eta = &lq * std_normal_vec(rng, r);
        let s = model.scale(t);
        for (k, &sc) in model.scaled.iter().enumerate() {
            if sc {
                eta[k] *= s;
            }
        }
        let a = tsp.mul_vec(&states[t]) + &model.c + &model.rsel * eta;
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            if observed(t, i) {
                let mut v = model.intercept(i, t) + model.h[i].sqrt() * e;
                for j in 0..m {
                    v += model.z[(i, j)] * a[j];
                }
                y[(t, i)] = v;
            }
        }
        states.push(a);
    }
    (states, y)
}

/// Durbin-Koopman mean-correction simulation smoother prepared for repeated
/// draws on a fixed data set.
pub struct SimulationSmoother<'a> {
    model: &'a StateSpaceModel,
    y: &'a DMatrix<f64>,
    filt: FilterOutput,
    smooth: SmootherOutput,
}

impl<'a> SimulationSmoother<'a> {
    pub fn new(model: &'a StateSpaceModel, y: &'a DMatrix<f64>) -> Result<Self> {
        let (filt, smooth) = filter_and_smooth(model, y)?;
        Ok(SimulationSmoother { model, y, filt, smooth })
    }

    pub fn smoothed(&self) -> &SmootherOutput {
        &self.smooth
    }

    /// One draw of periods 0..=T from the states' conditional distribution.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        let tn = self.y.nrows();
        let y = self.y;
        let (plus_states, plus_y) = simulate_model(self.model, tn, &|t, i| y[(t, i)].is_finite(), rng);
        let plus_hat = smooth_means_with(self.model, &self.filt, &self.smooth, &plus_y);
        (0..=tn)
            .map(|k| &self.smooth.a_smooth[k] - &plus_hat[k] + &plus_states[k])
            .collect()
    }
}

/// Single simulation-smoother draw (periods 1..=T as a T x m matrix),
/// deterministic given `seed`.
pub fn simulation_smoother(model: &StateSpaceModel, y: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ss = SimulationSmoother::new(model, y)?;
    let draw = ss.draw(&mut rng);
    let tn = y.nrows();
    let m = model.nstates();
    Ok(DMatrix::from_fn(tn, m, |t, j| draw[t + 1][j]))
}
