mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use potgap::covid::CovidMode;
use potgap::dfm::EmOptions;
use potgap::pipeline::{estimate_all, EstimateConfig};
use potgap::simulate::{simulate_dfm, DgpSpec};
use potgap::trend::*;
use std::f64::consts::PI;

#[test]
fn trend_loading_is_recovered_from_true_factors() {
    for seed in [1, 2, 3] {
        let sim = simulate_dfm(&DgpSpec::small(10, 240, 3, 1, seed)).unwrap();
        let tc = estimate_trend_em(&sim.truth.f, &TREND_EM_OPTIONS).unwrap();
        let cos = tc.psi.dot(&sim.truth.psi).abs() / (tc.psi.norm() * sim.truth.psi.norm());
        assert!(cos >= 0.99, "seed {seed}: cosine {cos}");
        assert!((tc.psi.norm() - 1.0).abs() < 1e-12);
        assert!(tc.psi[tc.trend_index] > 0.0);
    }
}

#[test]
fn trend_plus_cycle_reconstructs_factors() {
    let sim = simulate_dfm(&DgpSpec::small(10, 120, 2, 1, 7)).unwrap();
    let tc = estimate_trend_em(&sim.truth.f, &EmOptions { max_iter: 300, tol: 1e-6 }).unwrap();
    let rebuilt = tc.trend_part() + &tc.omega;
    assert!(max_abs(&rebuilt, &sim.truth.f) < 1e-10);
    for w in tc.loglik_path.windows(2) {
        assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
    assert_eq!(tc.loglik(), *tc.loglik_path.last().unwrap());
    let direct = trend_loglik(&tc, &sim.truth.f).unwrap();
    assert!(direct.is_finite());
}

fn orthogonal(q: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    rand_mat(&mut r, q, q).qr().q()
}

#[test]
fn fixed_parameter_trend_is_rotation_invariant() {
    let sim = simulate_dfm(&DgpSpec::small(10, 100, 3, 1, 11)).unwrap();
    let f = &sim.truth.f;
    let tc = estimate_trend_em(f, &EmOptions { max_iter: 200, tol: 1e-6 }).unwrap();
    let h = orthogonal(3, 12);
    let mut rot = tc.clone();
    rot.psi = h.transpose() * &tc.psi;
    rot.sigma_omega = h.transpose() * &tc.sigma_omega * &h;
    let fh = f * &h;
    let a = smooth_trend_with(&tc, f, tc.tau0).unwrap();
    let b = smooth_trend_with(&rot, &fh, tc.tau0).unwrap();
    for t in 0..a.len() {
        assert!((a[t] - b[t]).abs() < 1e-8);
    }
    let la = trend_loglik(&tc, f).unwrap();
    let lb = trend_loglik(&rot, &fh).unwrap();
    assert!((la - lb).abs() < 1e-8 * la.abs().max(1.0));
}

#[test]
fn spectral_share_oracles() {
    let cutoff = 2.0 * PI / 32.0;
    let mut r = rng(3);
    let noise: Vec<f64> = (0..2000).map(|_| randn(&mut r)).collect();
    let s = low_frequency_share(&noise, cutoff).unwrap();
    assert!((s - cutoff / PI).abs() < 0.02, "white-noise share {s}");
    let slow: Vec<f64> = (0..400).map(|t| (2.0 * PI * t as f64 / 100.0).sin()).collect();
    assert!(low_frequency_share(&slow, cutoff).unwrap() > 0.8);
    assert!(low_frequency_share(&[1.0; 20], cutoff).is_err());
}

#[test]
fn init_picks_the_persistent_factor() {
    let mut r = rng(8);
    let tn = 200;
    let mut f = DMatrix::zeros(tn, 3);
    let mut smooth = 0.0;
    for t in 0..tn {
        smooth = 0.95 * smooth + randn(&mut r);
        f[(t, 0)] = randn(&mut r);
        f[(t, 1)] = if t > 0 { f[(t - 1, 1)] } else { 0.0 } + smooth;
        f[(t, 2)] = randn(&mut r);
    }
    let (psi, j) = init_trend_loading(&f).unwrap();
    assert_eq!(j, 1);
    assert_eq!(psi, DVector::from_vec(vec![0.0, 1.0, 0.0]));
}

fn arma_increments(mu: f64, phi: f64, theta: f64, tn: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut tau = vec![0.0];
    let (mut x, mut e_prev) = (0.0, 0.0);
    for _ in 1..tn {
        let e = randn(&mut r);
        x = phi * x + e + theta * e_prev;
        e_prev = e;
        let last = *tau.last().unwrap();
        tau.push(last + mu + x);
    }
    tau
}

#[test]
fn mtw_recovers_arma_parameters() {
    let tau = arma_increments(0.3, 0.5, 0.3, 800, 21);
    let r = mtw_correction(&tau, &[]).unwrap();
    assert!((r.phi - 0.5).abs() < 0.15, "phi {}", r.phi);
    assert!((r.theta - 0.3).abs() < 0.15, "theta {}", r.theta);
    assert!((r.mu - 0.3).abs() < 0.3, "mu {}", r.mu);
    assert!(!r.flagged);
    assert_eq!(r.tau[0], tau[0]);
    assert_eq!(r.tau.len(), tau.len());
}

#[test]
fn mtw_on_random_walk_is_near_identity() {
    let tau = arma_increments(0.2, 0.0, 0.0, 400, 22);
    let r = mtw_correction(&tau, &[]).unwrap();
    let factor = (1.0 + r.theta) / (1.0 - r.phi);
    assert!((factor - 1.0).abs() < 0.2, "long-run factor {factor}");
    assert!(mtw_correction(&tau[..30], &[]).is_err());
}

#[test]
fn mtw_excluded_rows_do_not_enter_estimation() {
    let mut tau = arma_increments(0.2, 0.4, 0.0, 300, 23);
    let mut exclude = vec![false; 300];
    let base = mtw_correction(&tau, &exclude).unwrap();
    for t in 150..300 {
        tau[t] += 50.0;
    }
    exclude[150] = true;
    let r = mtw_correction(&tau, &exclude).unwrap();
    assert!((r.phi - base.phi).abs() < 1e-3, "{} vs {}", r.phi, base.phi);
}

#[test]
fn decomposition_adds_up_and_matches_gap() {
    let spec = DgpSpec { start: potgap::Quarter::new(2000, 1), ..DgpSpec::small(12, 60, 2, 1, 5) };
    let sim = simulate_dfm(&spec).unwrap();
    let cfg = EstimateConfig { q: Some(2), p: Some(1), covid_mode: CovidMode::None, ..EstimateConfig::default() };
    let (dfm, tc) = estimate_all(&sim.panel, &sim.meta, &cfg).unwrap();
    let d = decompose_series(&dfm, &tc, 0, DecompMode::Level).unwrap();
    let og = output_gap(&dfm, &tc, 0);
    let po = potential_output(&dfm, &tc, 0);
    for t in 0..60 {
        let sum = d.secular[t] + d.trend[t] + d.cycle[t] + d.covid[t] + d.idio[t];
        assert!((sum - d.data[t]).abs() < 1e-9);
        assert_eq!(d.cycle[t], og[t]);
        assert!((po[t] - d.secular[t] - d.trend[t]).abs() < 1e-9);
        assert!((d.data[t] - sim.panel.values[(t, 0)]).abs() < 1e-9);
    }
    let y = decompose_series(&dfm, &tc, 0, DecompMode::YearOnYear).unwrap();
    assert!(y.data[..4].iter().all(|v| v.is_nan()));
    assert!((y.cycle[10] - (og[10] - og[6])).abs() < 1e-12);
    let qa = decompose_series(&dfm, &tc, 0, DecompMode::QuarterAnnualized).unwrap();
    assert!((qa.trend[7] - 4.0 * (d.trend[7] - d.trend[6])).abs() < 1e-12);
}
