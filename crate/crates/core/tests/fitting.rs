use mvdist_core::density::{estimate_density, BinningRule};
use mvdist_core::fitting::{bin_curve, chi_squared, fit_interval, tail_exponent_binned, FitConfig, Scale};
use mvdist_core::{EmpiricalDensity, Family, ModelDistribution};

fn exact(model: &ModelDistribution) -> EmpiricalDensity {
    let bins = 161;
    let edges: Vec<f64> = (0..=bins).map(|i| -16.0 + 32.0 * i as f64 / bins as f64).collect();
    let values: Vec<f64> = edges.windows(2).map(|w| model.pdf(0.5 * (w[0] + w[1])).unwrap()).collect();
    EmpiricalDensity::from_curve(edges, values, 1_000_000_000_000, "exact").unwrap()
}

#[test]
fn exact_densities_give_identical_fits_on_both_scales() {
    let cfg = FitConfig::default();
    for (family, l, n, big_l) in [
        (Family::GG, None, 3.0, None),
        (Family::GA, None, 4.0, Some(9.0)),
        (Family::AG, Some(2.8), 7.0, None),
        (Family::AA, Some(2.6), 6.0, Some(12.0)),
    ] {
        let d = exact(&family.model(l, n, big_l).unwrap());
        let lin = fit_interval(&d, family, l, Scale::Lin, &cfg).unwrap();
        let log = fit_interval(&d, family, l, Scale::Log, &cfg).unwrap();
        let rel = |a: Option<f64>, b: Option<f64>| (a.unwrap() - b.unwrap()).abs() / b.unwrap();
        assert!(rel(lin.n, log.n) < 1e-6, "{family}: {:?} vs {:?}", lin.n, log.n);
        assert!(rel(log.n, Some(n)) < 1e-6, "{family}: {:?}", log.n);
        if big_l.is_some() {
            assert!(rel(lin.big_l, log.big_l) < 1e-6, "{family}: {:?} vs {:?}", lin.big_l, log.big_l);
        }
        assert!(log.chi2_ln.unwrap() < 1e-12);
    }
}

#[test]
fn gaussian_families_lose_to_aa_on_heavy_tails() {
    let cfg = FitConfig::default();
    let truth = Family::AA.model(Some(2.4), 5.0, Some(8.0)).unwrap();
    let d = estimate_density(&truth.sample(500_000, 21), &BinningRule::default(), "aa").unwrap();
    let gg = fit_interval(&d, Family::GG, None, Scale::Log, &cfg).unwrap();
    let aa = fit_interval(&d, Family::AA, Some(2.4), Scale::Log, &cfg).unwrap();
    assert!(gg.chi2_ln.unwrap() > aa.chi2_ln.unwrap(), "GG {:?} AA {:?}", gg.chi2_ln, aa.chi2_ln);
}

#[test]
fn fitted_n_beats_a_wrong_n() {
    let cfg = FitConfig::default();
    let d = estimate_density(&Family::GG.model(None, 5.0, None).unwrap().sample(300_000, 5), &BinningRule::default(), "gg")
        .unwrap();
    let fit = fit_interval(&d, Family::GG, None, Scale::Log, &cfg).unwrap();
    let wrong = chi_squared(&d, &bin_curve(&Family::GG.model(None, 50.0, None).unwrap(), &d).unwrap(), Scale::Log, 1, &cfg)
        .unwrap();
    assert!(fit.chi2_ln.unwrap() < wrong);
    assert!(!fit.boundary.any());
}

#[test]
fn binned_tail_slope_of_an_exact_power_law() {
    let m = ModelDistribution::kernel_only(mvdist_core::EpochKernel::algebraic(2.5).unwrap()).unwrap();
    let bins = 400;
    let edges: Vec<f64> = (0..=bins).map(|i| -400.0 + 800.0 * i as f64 / bins as f64).collect();
    let values: Vec<f64> = edges.windows(2).map(|w| m.pdf(0.5 * (w[0] + w[1])).unwrap()).collect();
    let d = EmpiricalDensity::from_curve(edges, values, 1_000_000_000_000, "t").unwrap();
    let fit = tail_exponent_binned(&d, 50.0, 400.0).unwrap();
    assert!((fit.positive.slope + 5.0).abs() < 0.05, "{}", fit.positive.slope);
    assert!((fit.positive.slope - fit.negative.slope).abs() < 1e-9);
}
