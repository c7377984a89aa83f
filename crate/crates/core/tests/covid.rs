mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use potgap::covid::*;
use potgap::dfm::TransitionMoments;
use potgap::statespace::SmootherOutput;

fn rank_one_idio(tn: usize, window: std::ops::Range<usize>, g: &[f64], gamma: &[f64], noise: f64, seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let n = gamma.len();
    let mut x = rand_mat(&mut r, tn, n) * noise;
    for (k, t) in window.enumerate() {
        for i in 0..n {
            x[(t, i)] += g[k] * gamma[i];
        }
    }
    x
}

#[test]
fn both_estimators_recover_a_rank_one_window() {
    let g = [4.0, -2.0, 1.5, 0.5, -0.3];
    let gamma: Vec<f64> = (0..12).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
    let idio = rank_one_idio(30, 20..25, &g, &gamma, 0.0, 1);
    for est in [estimate_covid_factor, estimate_covid_factor_alt] {
        let (gh, gam) = est(&idio, &[false; 12], 20..25).unwrap();
        for k in 0..5 {
            for i in 0..12 {
                assert!((gh[k] * gam[i] - g[k] * gamma[i]).abs() < 1e-10);
            }
        }
        let lead = gam.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        assert!(lead > 0.0);
    }
}

#[test]
fn loadings_use_observed_cells_only() {
    let g = [3.0, -1.0, 2.0, 0.7];
    let gamma: Vec<f64> = (0..10).map(|i| 1.0 + 0.2 * i as f64).collect();
    let mut idio = rank_one_idio(20, 10..14, &g, &gamma, 0.3, 2);
    idio[(11, 4)] = f64::NAN;
    let (gh, gam) = estimate_covid_factor(&idio, &[false; 10], 10..14).unwrap();
    for i in 0..10 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..4 {
            let v = idio[(10 + k, i)];
            if v.is_finite() {
                num += v * gh[k];
                den += gh[k] * gh[k];
            }
        }
        assert!((gam[i] - num / den).abs() < 1e-12);
    }
    let c = potgap::linalg::correlation(&gh, &g);
    assert!(c > 0.99, "factor correlation {c}");
}

#[test]
fn window_errors() {
    let idio = DMatrix::from_element(10, 3, 1.0);
    assert!(estimate_covid_factor(&idio, &[false; 3], 8..12).is_err());
    assert!(estimate_covid_factor(&idio, &[false; 3], 4..5).is_err());
    let mut holes = idio.clone();
    holes.row_mut(5).fill(f64::NAN);
    assert!(estimate_covid_factor(&holes, &[false; 3], 4..7).is_err());
}

#[test]
fn purge_and_identity() {
    let mut r = rng(4);
    let y = rand_mat(&mut r, 8, 3);
    let id = CovidAdjust::identity(3, 8, CovidMode::None);
    assert!(id.is_identity());
    assert_eq!(purge_covid(&y, &id), y);
    let mut adj = id.clone();
    adj.g[5] = 2.0;
    adj.gamma = DVector::from_vec(vec![1.0, -0.5, 0.0]);
    let p = purge_covid(&y, &adj);
    assert_eq!(p[(5, 0)], y[(5, 0)] - 2.0);
    assert_eq!(p[(5, 1)], y[(5, 1)] + 1.0);
    assert_eq!(p[(4, 0)], y[(4, 0)]);
    assert!(!adj.is_identity());
}

/// Moments of a VAR(1) simulated with volatility path `s` and observed
/// without error.
fn known_moments(s: &[f64], seed: u64) -> TransitionMoments {
    let q = 3;
    let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.3, -0.2]));
    let mut r = rng(seed);
    let tn = s.len();
    let mut states = vec![DVector::zeros(q); tn + 1];
    for t in 1..=tn {
        let e = rand_mat(&mut r, q, 1).column(0) * s[t - 1];
        states[t] = &a * &states[t - 1] + e;
    }
    let sm = SmootherOutput {
        a_smooth: states,
        p_smooth: vec![DMatrix::zeros(q, q); tn + 1],
        p_lag: vec![DMatrix::zeros(q, q); tn + 1],
        loglik: 0.0,
        gains: vec![DMatrix::zeros(q, q); tn + 1],
    };
    TransitionMoments::from_smoother(&sm, q, 1)
}

#[test]
fn concentrated_likelihood_at_unit_volatility() {
    let mom = known_moments(&vec![1.0; 50], 9);
    let (_, sigma) = mom.var_update(&[]).unwrap();
    let ll = concentrated_loglik(&mom, &vec![1.0; 50], 3.0);
    let ld = sigma.determinant().ln();
    assert!((ll + 25.0 * ld).abs() < 1e-10);
}

#[test]
fn decay_volatility_is_recovered() {
    let (tn, start) = (600, 300);
    let s = decay_path(tn, start, 4.0, 0.9);
    let mom = known_moments(&s, 10);
    let fit = estimate_covid_volatility_expdecay(&mom, start, VolExponent::Factors, 10).unwrap();
    assert!((fit.s_bar - 4.0).abs() < 1.0, "s_bar {}", fit.s_bar);
    assert!((fit.rho - 0.9).abs() < 0.05, "rho {}", fit.rho);
    assert!(fit.identified);
    assert_eq!(fit.s, decay_path(tn, start, fit.s_bar, fit.rho));
}

#[test]
fn homoskedastic_data_give_flat_volatility() {
    let (tn, start) = (600, 300);
    let mom = known_moments(&vec![1.0; tn], 11);
    let fit = estimate_covid_volatility_expdecay(&mom, start, VolExponent::Factors, 10).unwrap();
    let flat = concentrated_loglik(&mom, &vec![1.0; tn], 3.0);
    // Likelihood ratio below the 0.999 quantile of chi-square(2).
    assert!(2.0 * (fit.loglik - flat) < 13.82);
    let post = &fit.s[start..];
    let mean_dev = post.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / post.len() as f64;
    assert!(mean_dev < 0.05, "mean deviation {mean_dev}");
    assert!(fit.s[..start].iter().all(|v| *v == 1.0));
}

#[test]
fn free_path_flags_a_large_shock() {
    let tn = 120;
    let mut s = vec![1.0; tn];
    s[100] = 8.0;
    let mom = known_moments(&s, 12);
    let fit = estimate_covid_volatility(&mom, 100, VolExponent::Factors, 10).unwrap();
    assert!(fit.s[100] > 3.0, "s at shock {}", fit.s[100]);
    assert!(fit.s[..100].iter().all(|v| *v == 1.0));
    let flat = concentrated_loglik(&mom, &vec![1.0; tn], 3.0);
    assert!(fit.loglik >= flat);
    assert!(fit.s.iter().all(|v| (S_MIN..=S_MAX).contains(v)));
    assert!(estimate_covid_volatility(&mom, tn, VolExponent::Factors, 10).is_err());
}

#[test]
fn mode_names() {
    assert!("nonsense".parse::<CovidMode>().is_err());
    for m in ["benchmark", "none", "exp-decay", "frozen-2019", "alt-factor"] {
        let parsed: CovidMode = m.parse().unwrap();
        assert_eq!(parsed.to_string().parse::<CovidMode>().unwrap(), parsed);
    }
}
