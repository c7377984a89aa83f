mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use potgap::statespace::*;
use rand::Rng;

fn local_level(q: f64, h: f64, a0: f64, p0: f64) -> StateSpaceModel {
    StateSpaceModel::basic(
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, h),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, q),
        DVector::from_element(1, a0),
        DMatrix::from_element(1, 1, p0),
    )
}

#[test]
fn random_models_match_dense_oracle() {
    let mut r = rng(7);
    for _ in 0..20 {
        let m = 1 + (r.random_range(0..3usize));
        let n = 1 + (r.random_range(0..3usize));
        let tn = 2 + (r.random_range(0..7usize));
        let model = random_model(&mut r, m, n, tn);
        let y = random_data(&mut r, tn, n);
        let gap = oracle_gap(&model, &y);
        assert!(gap < 1e-8, "oracle gap {gap} (m={m}, n={n}, T={tn})");
    }
}


#[test]
fn two_state_model_t6_filtered_means() {
    let mut r = rng(99);
    let model = random_model(&mut r, 2, 2, 6);
    let y = rand_mat(&mut r, 6, 2);
    assert!(oracle_gap(&model, &y) < 1e-8);
}

#[test]
fn noiseless_local_level_reproduces_data() {
    let y = DMatrix::from_column_slice(5, 1, &[1.0, 1.0, 1.0, 1.0, 1.0]);
    let model = local_level(0.0, 0.0, 1.0, 0.0);
    let (f, s) = filter_and_smooth(&model, &y).unwrap();
    for t in 1..=5 {
        assert_eq!(f.a_filt[t][0], 1.0);
        assert_eq!(s.a_smooth[t][0], 1.0);
    }
    let draw = simulation_smoother(&model, &y, 3).unwrap();
    assert!(draw.iter().all(|v| (*v - 1.0).abs() < 1e-12));
}

#[test]
fn iid_measurement_loglik_is_closed_form() {
    let mut r = rng(1);
    let y = rand_mat(&mut r, 30, 2);
    let model = StateSpaceModel::basic(
        DMatrix::zeros(2, 1),
        DVector::from_element(2, 1.0),
        DMatrix::from_element(1, 1, 0.5),
        DMatrix::from_element(1, 1, 1.0),
        DVector::zeros(1),
        DMatrix::from_element(1, 1, 1.0),
    );
    let f = kalman_filter(&model, &y).unwrap();
    let closed: f64 = y.iter().map(|v| -0.5 * ((2.0 * std::f64::consts::PI).ln() + v * v)).sum();
    assert!((f.loglik - closed).abs() < 1e-10);
}

#[test]
fn smoother_equals_filter_at_last_period() {
    let mut r = rng(12);
    let model = random_model(&mut r, 3, 2, 8);
    let y = random_data(&mut r, 8, 2);
    let (f, s) = filter_and_smooth(&model, &y).unwrap();
    assert_eq!(f.a_filt[8], s.a_smooth[8]);
    assert_eq!(f.p_filt[8], s.p_smooth[8]);
}

#[test]
fn smoothed_variance_never_exceeds_filtered() {
    let mut r = rng(5);
    let model = random_model(&mut r, 3, 3, 8);
    let y = random_data(&mut r, 8, 3);
    let (f, s) = filter_and_smooth(&model, &y).unwrap();
    for t in 0..=8 {
        for j in 0..3 {
            assert!(s.p_smooth[t][(j, j)] <= f.p_filt[t][(j, j)] + 1e-8);
        }
        let p = &s.p_smooth[t];
        assert!(max_abs(p, &p.transpose()) < 1e-10);
        assert!(p.clone().symmetric_eigen().eigenvalues.min() > -1e-10);
    }
}

#[test]
fn reversible_ar1_smooths_symmetrically() {
    let phi: f64 = 0.7;
    let q = 1.0;
    let pstat = q / (1.0 - phi * phi);
    let model = StateSpaceModel::basic(
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, 0.5),
        DMatrix::from_element(1, 1, phi),
        DMatrix::from_element(1, 1, q),
        DVector::zeros(1),
        DMatrix::from_element(1, 1, pstat),
    );
    let half = [0.3, -1.2, 2.0, 0.7, -0.4];
    let mut vals: Vec<f64> = half.to_vec();
    vals.extend(half.iter().rev());
    let tn = vals.len();
    let y = DMatrix::from_column_slice(tn, 1, &vals);
    let (_, s) = filter_and_smooth(&model, &y).unwrap();
    for t in 1..=tn {
        let mirror = tn + 1 - t;
        assert!((s.a_smooth[t][0] - s.a_smooth[mirror][0]).abs() < 1e-8);
        assert!((s.p_smooth[t][(0, 0)] - s.p_smooth[mirror][(0, 0)]).abs() < 1e-8);
    }
}

#[test]
fn truncated_smoother_at_end_is_plain_smoother() {
    let mut r = rng(31);
    let model = random_model(&mut r, 2, 2, 7);
    let y = random_data(&mut r, 7, 2);
    let (f, s) = filter_and_smooth(&model, &y).unwrap();
    let t = smoother_with_reset(&model, &f, 7).unwrap();
    for k in 0..=7 {
        assert_eq!(s.a_smooth[k], t.a_smooth[k]);
        assert_eq!(s.p_smooth[k], t.p_smooth[k]);
    }
    assert!(smoother_with_reset(&model, &f, 0).is_err());
    assert!(smoother_with_reset(&model, &f, 8).is_err());
}

#[test]
fn truncated_smoother_matches_presample_and_isolates_outliers() {
    let mut r = rng(44);
    let tn = 12;
    let b = 7;
    let model = random_model(&mut r, 2, 3, tn);
    let mut y = random_data(&mut r, tn, 3);
    let trunc = truncated_smoother(&model, &y, b).unwrap();
    let pre = y.rows(0, b).into_owned();
    let (_, plain) = filter_and_smooth(&model, &pre).unwrap();
    for k in 0..=b {
        assert!((&trunc.a_smooth[k] - &plain.a_smooth[k]).abs().max() < 1e-10);
        assert!(max_abs(&trunc.p_smooth[k], &plain.p_smooth[k]) < 1e-10);
    }
    y[(b + 2, 0)] = 1e6;
    let moved = truncated_smoother(&model, &y, b).unwrap();
    for k in 0..=b {
        assert!((&trunc.a_smooth[k] - &moved.a_smooth[k]).abs().max() < 1e-10);
    }
}

#[test]
fn simulation_smoother_moments_match_smoother() {
    let model = local_level(0.5, 1.0, 0.0, 10.0);
    let vals = [0.2, 1.1, 0.4, -0.3, 0.9, 1.6, 1.2, 0.8];
    let y = DMatrix::from_column_slice(vals.len(), 1, &vals);
    let ss = SimulationSmoother::new(&model, &y).unwrap();
    let t = 4;
    let mean = ss.smoothed().a_smooth[t][0];
    let var = ss.smoothed().p_smooth[t][(0, 0)];
    let mut r = rng(2024);
    let draws: Vec<f64> = (0..10_000).map(|_| ss.draw(&mut r)[t][0]).collect();
    let n = draws.len() as f64;
    let m = draws.iter().sum::<f64>() / n;
    let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((m - mean).abs() < 4.0 * (var / n).sqrt());
    assert!((v / var - 1.0).abs() < 0.1);
}

#[test]
fn simulation_smoother_is_deterministic() {
    let mut r = rng(8);
    let model = random_model(&mut r, 2, 2, 6);
    let y = random_data(&mut r, 6, 2);
    let a = simulation_smoother(&model, &y, 17).unwrap();
    let b = simulation_smoother(&model, &y, 17).unwrap();
    let c = simulation_smoother(&model, &y, 18).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn masked_filter_equals_plain_filter_bitwise() {
    let mut r = rng(60);
    let model = random_model(&mut r, 3, 3, 8);
    let y = rand_mat(&mut r, 8, 3);
    let mask = DMatrix::from_element(8, 3, true);
    let a = kalman_filter(&model, &y).unwrap();
    let b = kalman_filter_masked(&model, &y, &mask).unwrap();
    assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
    for t in 0..=8 {
        assert_eq!(a.a_filt[t], b.a_filt[t]);
        assert_eq!(a.p_filt[t], b.p_filt[t]);
    }
}

#[test]
fn inflating_measurement_noise_lowers_fit_of_noiseless_data() {
    let model = local_level(0.2, 0.01, 0.0, 1.0);
    let mut r = rng(3);
    let (_, y) = simulate_model(&local_level(0.2, 0.0, 0.0, 1.0), 40, &|_, _| true, &mut r);
    let mut prev = kalman_filter(&model, &y).unwrap().loglik;
    for h in [0.1, 1.0, 10.0] {
        let mut m = model.clone();
        m.h[0] = h;
        let ll = kalman_filter(&m, &y).unwrap().loglik;
        assert!(ll < prev);
        prev = ll;
    }
}

#[test]
fn non_finite_input_is_rejected() {
    let model = local_level(1.0, 1.0, 0.0, 1.0);
    let y = DMatrix::from_column_slice(2, 1, &[1.0, f64::INFINITY]);
    assert!(kalman_filter(&model, &y).is_err());
    let mut bad = model.clone();
    bad.q[(0, 0)] = f64::NAN;
    assert!(kalman_filter(&bad, &DMatrix::from_element(2, 1, 0.0)).is_err());
}
