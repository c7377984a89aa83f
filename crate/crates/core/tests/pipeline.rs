use potgap::covid::CovidMode;
use potgap::pipeline::{estimate_all, EstimateConfig, FitBundle, RunConfig};
use potgap::simulate::{simulate_dfm, DgpSpec};
use potgap::trend::output_gap;
use potgap::Quarter;

#[test]
fn saved_fit_reloads_bit_for_bit() {
    let spec = DgpSpec { start: Quarter::new(2000, 1), ..DgpSpec::small(12, 60, 2, 1, 21) };
    let sim = simulate_dfm(&spec).unwrap();
    let cfg = EstimateConfig { q: Some(2), p: Some(1), covid_mode: CovidMode::None, ..EstimateConfig::default() };
    let (dfm, trend) = estimate_all(&sim.panel, &sim.meta, &cfg).unwrap();
    let bundle = FitBundle { config: cfg, dfm, trend };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/fit.json");
    bundle.save(&path).unwrap();
    let back = FitBundle::load(&path).unwrap();
    let a = output_gap(&bundle.dfm, &bundle.trend, 0);
    let b = output_gap(&back.dfm, &back.trend, 0);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(bundle.dfm.params.lambda, back.dfm.params.lambda);
}

#[test]
fn run_config_parses_and_resolves() {
    let cfg = RunConfig::parse("# comment\nq = 3\np = auto\ncovid_mode = exp-decay\nseed = 9\nB = 50\n").unwrap();
    assert_eq!(cfg.estimate.q, Some(3));
    assert_eq!(cfg.estimate.p, None);
    assert_eq!(cfg.estimate.covid_mode, CovidMode::ExpDecay);
    assert_eq!(cfg.bootstrap_reps, 50);
    let r = cfg.resolved();
    assert_eq!(r["q"], "3");
    assert_eq!(r["p"], "auto");
    assert_eq!(r["seed"], "9");
    assert!(RunConfig::parse("q = three").is_err());
    assert!(RunConfig::parse("colour = red").is_err());
}
