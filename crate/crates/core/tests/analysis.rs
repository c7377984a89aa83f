mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use potgap::analysis::*;
use potgap::covid::CovidMode;
use potgap::dfm::{DfmFit, EmOptions};
use potgap::pipeline::{estimate_all, EstimateConfig};
use potgap::simulate::{simulate_dfm, DgpSpec};
use potgap::trend::TrendCycleFit;
use potgap::Quarter;

fn small_fit(p: usize, seed: u64) -> (DfmFit, TrendCycleFit) {
    let spec = DgpSpec { start: Quarter::new(2000, 1), ..DgpSpec::small(12, 60, 2, p, seed) };
    let sim = simulate_dfm(&spec).unwrap();
    let cfg = EstimateConfig { q: Some(2), p: Some(p), covid_mode: CovidMode::None, ..EstimateConfig::default() };
    estimate_all(&sim.panel, &sim.meta, &cfg).unwrap()
}

#[test]
fn girf_contracts() {
    let (dfm, tc) = small_fit(1, 3);
    let zero = girf(&dfm, &tc, "S003", 0.0, 8, 0).unwrap();
    assert!(zero.common.iter().all(|v| *v == 0.0));
    assert!(zero.po.iter().chain(&zero.og).all(|v| *v == 0.0));

    let size = 1.7;
    let r = girf(&dfm, &tc, "S003", size, 8, 0).unwrap();
    assert!((r.shocked_response[0] - size).abs() < 1e-6 * size);
    assert_eq!(r.shocked_response.len(), 9);

    let a = &dfm.params.a[0];
    let f0 = r.factors.row(0).transpose();
    let mut power = DMatrix::identity(2, 2);
    for h in 0..=8 {
        let expect = &power * &f0;
        let got = r.factors.row(h).transpose();
        assert!((got - expect).amax() < 1e-6);
        power = a * power;
    }
    for h in 0..=8 {
        assert!((r.po[h] + r.og[h] - r.common[(h, 0)]).abs() < 1e-9);
    }

    let double = girf(&dfm, &tc, "S003", 2.0 * size, 8, 0).unwrap();
    assert!(max_abs(&double.common, &(&r.common * 2.0)) < 1e-9);

    assert!(girf(&dfm, &tc, "NOPE", 1.0, 8, 0).is_err());
    assert!(girf(&dfm, &tc, "S003", 1.0, 0, 0).is_err());
    assert!(girf(&dfm, &tc, "S003", 1.0, 4, 99).is_err());
}

#[test]
fn conditional_path_is_matched_at_every_constrained_horizon() {
    let (dfm, tc) = small_fit(2, 4);
    let path = [0.5, -0.3, 0.8];
    let r = conditional_forecast(&dfm, &tc, "GDP", &path, 6, 0).unwrap();
    for (h, v) in path.iter().enumerate() {
        assert!((r.shocked_response[h] - v).abs() < 1e-6);
    }
    assert!(conditional_forecast(&dfm, &tc, "GDP", &[0.0; 9], 6, 0).is_err());
}

#[test]
fn scenario_tools() {
    let line: Vec<f64> = (0..12).map(|t| 3.0 - 0.5 * t as f64).collect();
    let cf = linear_counterfactual(&line);
    for t in 0..12 {
        assert!((cf[t] - line[t]).abs() < 1e-12);
    }
    let cubic: Vec<f64> = (0..20).map(|t| {
        let x = t as f64 / 19.0;
        1.0 + x - 2.0 * x * x + 0.7 * x * x * x
    }).collect();
    let sm = polynomial_smooth(&cubic, 3).unwrap();
    for t in 0..20 {
        assert!((sm[t] - cubic[t]).abs() < 1e-10);
    }
    let dev = scenario_path(&line, 2..10, 3).unwrap();
    assert!(dev.iter().all(|v| v.abs() < 1e-10));
    let mut bump = line.clone();
    bump[5] -= 2.0;
    let dev = scenario_path(&bump, 2..10, 2).unwrap();
    assert!(dev[3] < 0.0);
    assert!(scenario_path(&line, 8..14, 2).is_err());
    assert!(polynomial_smooth(&[1.0, 2.0, 3.0], 3).is_err());
    assert!(scenario_deviation(&[1.0; 5], &[1.0; 4], 1).is_err());
}

#[test]
fn okun_and_phillips_recover_exact_coefficients() {
    let mut r = rng(5);
    let n = 80;
    let og: Vec<f64> = (0..n).map(|_| randn(&mut r)).collect();
    let trend: Vec<f64> = (0..n).map(|t| 5.0 + 0.01 * t as f64).collect();
    let ur: Vec<f64> = (0..n).map(|t| trend[t] + 0.2 - 0.4 * og[t]).collect();
    let fit = okun_regression(&og, &ur, &trend, &[]).unwrap();
    assert!((fit.coef[0] - 0.2).abs() < 1e-10 && (fit.coef[1] + 0.4).abs() < 1e-10);

    let lag: Vec<f64> = (0..n).map(|_| randn(&mut r)).collect();
    let exp: Vec<f64> = (0..n).map(|_| randn(&mut r)).collect();
    let noise: Vec<f64> = (0..n).map(|_| 0.1 * randn(&mut r)).collect();
    let pi: Vec<f64> = (0..n).map(|t| 0.5 + 0.3 * og[t] + 0.4 * lag[t] + 0.2 * exp[t] + noise[t]).collect();
    let ph = phillips_regression(&pi, &og, &lag, &exp, &[]).unwrap();
    let x = DMatrix::from_fn(n, 4, |t, j| [1.0, og[t], lag[t], exp[t]][j]);
    let beta = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * DVector::from_column_slice(&pi)));
    for j in 0..4 {
        assert!((ph.coef[j] - beta[j]).abs() < 1e-10);
    }
    // omitted rows do not enter
    let mut dirty = ur.clone();
    dirty[10] = 1e6;
    let omitted = okun_regression(&og, &dirty, &trend, &[10]).unwrap();
    assert!((omitted.coef[1] + 0.4).abs() < 1e-10);
    assert_eq!(omitted.nobs, n - 1);
}

#[test]
fn expanding_paths_grow_by_one() {
    let mut r = rng(6);
    let n = 60;
    let dates = Quarter::range(Quarter::new(2000, 1), n);
    let og: Vec<f64> = (0..n).map(|_| randn(&mut r)).collect();
    let trend = vec![5.0; n];
    let ur: Vec<f64> = (0..n).map(|t| 5.0 - 0.5 * og[t] + 0.1 * randn(&mut r)).collect();
    let path = okun_expanding(&dates, &og, &ur, &trend, dates[30], &[]).unwrap();
    assert_eq!(path.len(), 30);
    for (k, pt) in path.iter().enumerate() {
        assert_eq!(pt.nobs, 31 + k);
        assert_eq!(pt.end, dates[30 + k]);
    }
    let last = okun_regression(&og, &ur, &trend, &[]).unwrap();
    assert_eq!(path.last().unwrap().coef[1], last.coef[1]);
    assert!(okun_expanding(&dates, &og, &ur, &trend, dates[5], &[]).is_err());
}

#[test]
fn adl_forecast_is_exact_on_a_linear_process() {
    let n = 100;
    let mut r = rng(7);
    let og: Vec<f64> = (0..n).map(|_| randn(&mut r)).collect();
    // Build quarterly inflation so that yoy(t+4) = 0.6 yoy(t) + 0.5 og(t).
    let mut pi = vec![0.0; n];
    for t in 0..7 {
        pi[t] = 0.5 + 0.1 * randn(&mut r);
    }
    for t in 7..n {
        let s = t - 4;
        let target = 0.6 * yoy(&pi, s) + 0.5 * og[s];
        pi[t] = target - pi[t - 3..t].iter().sum::<f64>();
    }
    for t in [60, 75, 90] {
        let fc = adl_forecast(&pi, &og, t).unwrap();
        assert!((fc - (0.6 * yoy(&pi, t) + 0.5 * og[t])).abs() < 1e-8);
    }
    assert!(adl_forecast(&pi, &og, 40).is_err());
    let pts = adl_expanding(&pi, &og, 60).unwrap();
    assert_eq!(pts.len(), n - 4 - 60);
    assert!(pts.iter().all(|p| p.error().abs() < 1e-8));
    assert!((yoy(&[1.0, 2.0, 3.0, 4.0, 5.0], 4) - 14.0).abs() < 1e-15);
    assert!(yoy(&[1.0, 2.0], 1).is_nan());
}

#[test]
fn forecast_evaluation_trivial_cases_and_oracle() {
    let mut r = rng(8);
    let e: Vec<f64> = (0..40).map(|_| randn(&mut r)).collect();
    let same = forecast_eval(&e, &e).unwrap();
    assert_eq!(same.rel_rmse, 1.0);
    assert_eq!(same.dm_pvalue, 1.0);
    let twice: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
    let half = forecast_eval(&e, &twice).unwrap();
    assert_eq!(half.rel_rmse, 0.5);
    assert!(half.dm_stat < 0.0);

    let alt: Vec<f64> = (0..40).map(|_| randn(&mut r)).collect();
    let ev = forecast_eval(&e, &alt).unwrap();
    let d: Vec<f64> = e.iter().zip(&alt).map(|(a, b)| a * a - b * b).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let gamma = |k: usize| (k..d.len()).map(|t| (d[t] - m) * (d[t - k] - m)).sum::<f64>() / n;
    let lrv = gamma(0) + 2.0 * (1..=3).map(|k| (1.0 - k as f64 / 4.0) * gamma(k)).sum::<f64>();
    let stat = m / (lrv / n).sqrt();
    assert!((ev.dm_stat - stat).abs() < 1e-10, "{} vs {stat}", ev.dm_stat);
    let hln = stat * ((n + 1.0 - 8.0 + 4.0 * 3.0 / n) / n).sqrt();
    assert!((ev.dm_stat_harvey - hln).abs() < 1e-10);
    assert!(ev.dm_pvalue > 0.0 && ev.dm_pvalue <= 1.0);

    assert!(forecast_eval(&e[..5], &alt[..5]).is_err());
    assert!(forecast_eval(&e, &alt[..39]).is_err());
    assert!(forecast_eval(&e, &vec![0.0; 40]).is_err());
}

#[test]
fn dm_size_is_close_to_nominal() {
    let mut r = rng(9);
    let sims = 300;
    let mut rejections = 0;
    for _ in 0..sims {
        let a: Vec<f64> = (0..80).map(|_| randn(&mut r)).collect();
        let b: Vec<f64> = (0..80).map(|_| randn(&mut r)).collect();
        if forecast_eval(&a, &b).unwrap().dm_pvalue_harvey < 0.10 {
            rejections += 1;
        }
    }
    let size = rejections as f64 / sims as f64;
    assert!((0.04..=0.18).contains(&size), "size {size}");
}

#[test]
fn target_names() {
    assert_eq!("core".parse::<InflationTarget>().unwrap(), InflationTarget::Core);
    assert_eq!(InflationTarget::Headline.to_string(), "headline");
    assert!("cpi".parse::<InflationTarget>().is_err());
    assert_eq!(QrtMode::Frozen(Quarter::new(2019, 4)).to_string(), "frozen:2019Q4");
    assert_eq!("frozen".parse::<QrtMode>().unwrap(), QrtMode::Frozen(Quarter::new(2019, 4)));
    let _ = EmOptions::default();
}
