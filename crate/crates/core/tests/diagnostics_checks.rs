use dpsw_core::diagnostics::{
    endpoint_measurement, kolmogorov_sf, ks_test_normal, mean, pearson, posterior_necessary_conditions,
    term_ratio_curve, wt_curve,
};
use dpsw_core::guidance::GuidanceSpec;
use dpsw_core::operators::forward_model;
use dpsw_core::rng::{derive_seed, rng_from_seed};
use dpsw_core::{build_sampler, GaussianMixture, Integrator, LinearOperator, Sampler, ScheduleSpec};
use rand_distr::{Distribution, StandardNormal};

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn kolmogorov_survival_matches_scipy() {
    for (x, want) in [
        (0.3, 0.9999906941986655),
        (0.5, 0.9639452436648751),
        (0.8, 0.5441424115741981),
        (1.0, 0.26999967167735456),
        (1.36, 0.049485876755377876),
        (2.0, 0.0006709252557796953),
    ] {
        assert!((kolmogorov_sf(x) - want).abs() < 1e-10, "{x}");
    }
}

#[test]
fn ks_pvalues_are_uniform_under_the_null() {
    let reps = 100;
    let mut deciles = [0usize; 10];
    for r in 0..reps {
        let (_, p) = ks_test_normal(&normals(derive_seed(77, r), 1_000_000), 0.0, 1.0);
        deciles[((p * 10.0) as usize).min(9)] += 1;
    }
    let e = reps as f64 / 10.0;
    let chi2: f64 = deciles.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    // 99.9% quantile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 27.877, "chi2 {chi2} deciles {deciles:?}");
}

#[test]
fn ks_rejects_shifted_samples() {
    let xs: Vec<f64> = normals(3, 10_000).iter().map(|x| x + 0.1).collect();
    assert!(ks_test_normal(&xs, 0.0, 1.0).1 < 1e-6);
}

#[test]
fn pearson_of_independent_streams_is_small() {
    let n = 2000;
    let bound = 4.0 / (n as f64).sqrt();
    let hits = (0..100u64)
        .filter(|&r| pearson(&normals(2 * r + 1, n), &normals(2 * r + 2, n)).abs() < bound)
        .count();
    assert!(hits >= 99, "{hits}");
    let x = normals(9, 100);
    let y: Vec<f64> = x.iter().map(|v| -3.0 * v + 1.0).collect();
    assert!((pearson(&x, &y) + 1.0).abs() < 1e-12);
}

fn ve() -> Box<dyn Sampler> {
    build_sampler(&ScheduleSpec::ve(1000, 0.01, 20.0).build().unwrap(), Integrator::Auto).unwrap()
}

fn vp_em() -> Box<dyn Sampler> {
    build_sampler(&ScheduleSpec::vp(1000).build().unwrap(), Integrator::EulerMaruyama).unwrap()
}

#[test]
fn exact_sampler_passes_necessary_conditions() {
    let g = GaussianMixture::preset("gauss1d").unwrap();
    let exact = GuidanceSpec::method("exact").build().unwrap();
    let d = posterior_necessary_conditions(ve().as_ref(), exact.as_ref(), &g, 0.2, 200, 40, 5, jobs()).unwrap();
    assert!((1.7..=2.3).contains(&d.mse_mmse_ratio), "{d:?}");
    assert!((0.18..=0.22).contains(&d.residual_std), "{d:?}");
    assert!(d.ks_pvalue > 0.01, "{d:?}");
    assert!(d.pearson_r.abs() < 0.05, "{d:?}");
    assert_eq!((d.n_conditions, d.n_samples_per_condition), (200, 40));
}

#[test]
fn unguided_sampler_fails_necessary_conditions() {
    let g = GaussianMixture::preset("gauss1d").unwrap();
    let none = GuidanceSpec::method("none").build().unwrap();
    let d = posterior_necessary_conditions(ve().as_ref(), none.as_ref(), &g, 0.2, 50, 10, 5, jobs()).unwrap();
    assert!(d.residual_std > 0.5 && d.ks_pvalue < 1e-6, "{d:?}");
}

#[test]
fn necessary_conditions_reject_bad_inputs() {
    let g = GaussianMixture::preset("gauss1d").unwrap();
    let exact = GuidanceSpec::method("exact").build().unwrap();
    let s = ve();
    assert!(posterior_necessary_conditions(s.as_ref(), exact.as_ref(), &g, 0.2, 5, 1, 1, 1).is_err());
    assert!(posterior_necessary_conditions(s.as_ref(), exact.as_ref(), &g, -0.2, 5, 5, 1, 1).is_err());
}

fn double_well_measurement(sigma_y: f64, seed: u64) -> dpsw_core::Measurement {
    let g = GaussianMixture::double_well();
    let x0 = g.sample_prior(seed, 1).remove(0);
    forward_model(&x0, &LinearOperator::Identity, sigma_y, seed).unwrap()
}

fn half_means(w: &[(usize, f64)]) -> (f64, f64) {
    let h = w.len() / 2;
    let vals: Vec<f64> = w.iter().map(|p| p.1).collect();
    (mean(&vals[..h]), mean(&vals[h..]))
}

#[test]
fn dpsw_weights_are_small_early() {
    let g = GaussianMixture::double_well();
    let m = double_well_measurement(0.05, 21);
    let w = wt_curve(vp_em().as_ref(), &g, &m, false, 1).unwrap();
    assert_eq!(w.len(), 1000);
    assert_eq!(w.first().unwrap().0, 999);
    assert!(w.iter().all(|p| p.1.is_finite() && p.1 >= 0.0));
    let (a, b) = half_means(&w);
    assert!(a < b, "{a} vs {b}");
}

fn vp() -> Box<dyn Sampler> {
    build_sampler(&ScheduleSpec::vp(1000).build().unwrap(), Integrator::Auto).unwrap()
}

fn ratio_series(s: &dyn Sampler, sigma_y: f64, seed: u64) -> Vec<(usize, f64)> {
    let g = GaussianMixture::double_well();
    let m = endpoint_measurement(s, &g, &LinearOperator::Identity, sigma_y, seed).unwrap();
    term_ratio_curve(s, &g, &m.y, &[sigma_y], seed)
        .unwrap()
        .remove(0)
        .points
}

#[test]
fn guidance_dominates_at_low_noise() {
    let s = vp();
    for seed in 0..10 {
        let p = ratio_series(s.as_ref(), 0.01, seed);
        assert_eq!(p.len(), 1000);
        assert_eq!((p[0].0, p[999].0), (1000, 1));
        // Steps are listed from t = N downwards, so the upper 90% come first.
        assert!(p[..900].iter().all(|q| q.1 > 0.0), "seed {seed}");
        assert!(ratio_series(s.as_ref(), 1e9, seed).iter().all(|q| q.1 < -3.0));
    }
}

#[test]
fn guidance_dominates_at_low_noise_on_ve_ladder() {
    // A trajectory can pass close to y for a few steps, so count draws.
    let s = ve();
    let ok = (0..40)
        .filter(|&seed| ratio_series(s.as_ref(), 0.01, seed)[..900].iter().all(|q| q.1 > 0.0))
        .count();
    assert!(ok >= 36, "{ok}/40");
}

#[test]
fn prior_term_matters_late_at_moderate_noise() {
    // Not every joint draw crosses; the frequency is what is checked.
    let s = vp();
    let crossing = (0..40)
        .filter(|&seed| ratio_series(s.as_ref(), 0.2, seed)[900..].iter().any(|q| q.1 < 0.0))
        .count();
    assert!(crossing >= 10, "{crossing}/40");
}
