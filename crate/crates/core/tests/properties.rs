mod common;

use common::{fd_grad, Grid, PosteriorQuadrature};
use dpsw_core::guidance::{exact_denoising_score, GuidanceOutput};
use dpsw_core::schedule::{alphabar_to_sigma, sigma_to_alphabar, tilde_cov_inpaint, tilde_params};
use dpsw_core::{Component, GaussianMixture, LinearOperator, NoiseCov, VpSchedule};
use proptest::prelude::*;

fn mixture(dim: usize) -> impl Strategy<Value = GaussianMixture> {
    let comp = (
        0.1f64..1.0,
        prop::collection::vec(-3.0f64..3.0, dim),
        prop::collection::vec(0.05f64..2.0, dim),
    );
    prop::collection::vec(comp, 1..4).prop_map(|cs| {
        let total: f64 = cs.iter().map(|c| c.0).sum();
        GaussianMixture::new(
            cs.into_iter()
                .map(|(w, mean, var)| Component {
                    weight: w / total,
                    mean,
                    var,
                })
                .collect(),
        )
        .unwrap()
    })
}

fn mixture_and_point() -> impl Strategy<Value = (GaussianMixture, Vec<f64>, f64)> {
    prop::sample::select(vec![1usize, 2, 3, 5])
        .prop_flat_map(|d| (mixture(d), prop::collection::vec(-4.0f64..4.0, d), 0.0f64..2.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_gradient_of_log_density((g, x, s2) in mixture_and_point()) {
        let noise = NoiseCov::Isotropic(s2);
        let fd = fd_grad(|p| g.log_density_perturbed(p, &noise).unwrap(), &x, 1e-5);
        let s = g.score_perturbed(&x, &noise).unwrap();
        for j in 0..x.len() {
            prop_assert!((s[j] - fd[j]).abs() < 1e-4, "{} vs {}", s[j], fd[j]);
        }
    }

    #[test]
    fn hessian_is_symmetric_jacobian_of_score((g, x, s2) in mixture_and_point()) {
        let noise = NoiseCov::Isotropic(s2);
        let h = g.hessian_perturbed(&x, &noise).unwrap();
        let d = x.len();
        for j in 0..d {
            let mut p = x.clone();
            let mut m = x.clone();
            p[j] += 1e-5;
            m[j] -= 1e-5;
            let sp = g.score_perturbed(&p, &noise).unwrap();
            let sm = g.score_perturbed(&m, &noise).unwrap();
            for i in 0..d {
                let fd = (sp[i] - sm[i]) / 2e-5;
                prop_assert!((h[(i, j)] - fd).abs() < 1e-4);
                prop_assert!((h[(i, j)] - h[(j, i)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn convolution_semigroup((g, x, v1) in mixture_and_point(), v2 in 0.0f64..2.0) {
        let once = g.convolved(&NoiseCov::Isotropic(v1)).unwrap();
        let a = once.log_density_perturbed(&x, &NoiseCov::Isotropic(v2)).unwrap();
        let b = g.log_density_perturbed(&x, &NoiseCov::Isotropic(v1 + v2)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        let sa = once.score_perturbed(&x, &NoiseCov::Isotropic(v2)).unwrap();
        let sb = g.score_perturbed(&x, &NoiseCov::Isotropic(v1 + v2)).unwrap();
        for j in 0..x.len() {
            prop_assert!((sa[j] - sb[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn far_queries_are_finite(g in mixture(2), dir in prop::collection::vec(-1.0f64..1.0, 2)) {
        let x: Vec<f64> = dir.iter().map(|d| 50.0 * 1.5 * d.signum() + 3.0 * d.signum()).collect();
        let n = NoiseCov::none();
        prop_assert!(g.log_density_perturbed(&x, &n).unwrap().is_finite());
        prop_assert!(g.score_perturbed(&x, &n).unwrap().iter().all(|v| v.is_finite()));
        prop_assert!(g.hessian_perturbed(&x, &n).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tilde_symmetry_and_bounds(
        y in prop::collection::vec(-5.0f64..5.0, 3),
        x in prop::collection::vec(-5.0f64..5.0, 3),
        sy in 1e-3f64..10.0,
        st in 1e-3f64..10.0,
    ) {
        let a = tilde_params(&y, &x, sy, st).unwrap();
        let b = tilde_params(&x, &y, st, sy).unwrap();
        prop_assert!((a.sigma_tilde_sq - b.sigma_tilde_sq).abs() <= 1e-12 * a.sigma_tilde_sq);
        for j in 0..3 {
            prop_assert!((a.x_tilde[j] - b.x_tilde[j]).abs() < 1e-12);
            let (lo, hi) = (x[j].min(y[j]), x[j].max(y[j]));
            prop_assert!(a.x_tilde[j] >= lo - 1e-12 && a.x_tilde[j] <= hi + 1e-12);
        }
        prop_assert!(a.sigma_tilde_sq < (sy * sy).min(st * st));
        prop_assert!((a.guidance_var - (sy * sy + st * st)).abs() < 1e-12 * a.guidance_var);
        let all = tilde_cov_inpaint(&[1.0; 3], sy, st).unwrap();
        for j in 0..3 {
            prop_assert!((all.at(j) - a.sigma_tilde_sq).abs() <= 1e-15 * a.sigma_tilde_sq.max(1.0));
        }
    }

    #[test]
    fn vp_ve_round_trip(ab in 1e-6f64..(1.0 - 1e-9)) {
        prop_assert!((sigma_to_alphabar(alphabar_to_sigma(ab)) - ab).abs() < 1e-12);
    }

    #[test]
    fn decomposition_sums((g, x, _s2) in mixture_and_point(), sy in 0.01f64..3.0, st in 0.01f64..5.0) {
        let y: Vec<f64> = x.iter().map(|v| 0.5 - v).collect();
        let out: GuidanceOutput = exact_denoising_score(&g, &x, &y, sy, st).unwrap();
        for j in 0..x.len() {
            prop_assert!((out.posterior_score[j] - out.prior_term[j] - out.guidance_term[j]).abs() < 1e-12
                * out.posterior_score[j].abs().max(1.0));
        }
    }

    #[test]
    fn operator_transpose_agrees_with_dense(
        d in prop::collection::vec(prop_oneof![-3.0f64..-0.1, 0.1f64..3.0], 4),
        x in prop::collection::vec(-3.0f64..3.0, 4),
        z in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let op = LinearOperator::diagonal(d.clone()).unwrap();
        let dense = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d));
        let ax = op.apply(&x);
        let atz = op.apply_transpose(&z);
        let ax_dense = &dense * nalgebra::DVector::from_vec(x.clone());
        let atz_dense = dense.transpose() * nalgebra::DVector::from_vec(z.clone());
        for j in 0..4 {
            prop_assert!((ax[j] - ax_dense[j]).abs() < 1e-15);
            prop_assert!((atz[j] - atz_dense[j]).abs() < 1e-15);
        }
    }
}

#[test]
fn frozen_density_and_derivative_values() {
    let g = GaussianMixture::double_well();
    // Values from an independent numpy oracle (trapezoid on 1201² over [−8,8]²
    // and central differences of the closed form).
    let l = g
        .log_density_perturbed(&[0.0, 0.0], &NoiseCov::Isotropic(0.25))
        .unwrap();
    assert!(((l - -4.900796195244626) / l).abs() < 1e-8);
    let s = g
        .score_perturbed(&[1.0, 1.0], &NoiseCov::Diagonal(vec![0.04, 0.09]))
        .unwrap();
    assert!((s[0] - 3.846151558617).abs() < 1e-5 && (s[1] - -3.418802366228).abs() < 1e-5);

    let sym = GaussianMixture::equal_weights(&[(vec![1.0], vec![0.5]), (vec![-1.0], vec![0.5])]).unwrap();
    let h = sym.hessian_perturbed(&[0.0], &NoiseCov::none()).unwrap();
    assert!((h[(0, 0)] - 12.0).abs() < 1e-4);
}

#[test]
fn density_matches_rust_quadrature() {
    let g = GaussianMixture::double_well();
    let q = PosteriorQuadrature::new(
        &g,
        &Grid {
            lo: -8.0,
            hi: 8.0,
            n: 1201,
        },
    );
    for x in [[0.0, 0.0], [-1.0, 2.0], [1.5, 0.3]] {
        let got = g.log_density_perturbed(&x, &NoiseCov::Isotropic(0.25)).unwrap();
        // Add back the Gaussian normalizer dropped by the quadrature helper.
        let want = q.log_perturbed(&x, 0.5) - (2.0 * std::f64::consts::PI * 0.25).ln();
        assert!(((got - want) / got).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn prior_sample_moments() {
    let g = GaussianMixture::double_well();
    let xs = g.sample_prior(2024, 100_000);
    let n = xs.len() as f64;
    let mean = g.mean();
    let var = g.variance();
    for j in 0..2 {
        let m = xs.iter().map(|x| x[j]).sum::<f64>() / n;
        assert!((m - mean[j]).abs() < 3.0 * (var[j] / n).sqrt());
    }
    assert!((mean[0] - -0.25).abs() < 1e-15 && (mean[1] - 1.2).abs() < 1e-15);

    let single = GaussianMixture::isotropic(vec![0.0], 0.7).unwrap();
    let xs = single.sample_prior(5, 50_000);
    let n = xs.len() as f64;
    let m = xs.iter().map(|x| x[0]).sum::<f64>() / n;
    let v = xs.iter().map(|x| (x[0] - m).powi(2)).sum::<f64>() / (n - 1.0);
    // Var of the sample variance for a Gaussian is 2σ⁴/(n−1).
    assert!((v - 0.7).abs() < 3.0 * (2.0 * 0.49 / (n - 1.0)).sqrt());
    assert_eq!(single.sample_prior(5, 1), single.sample_prior(5, 1));
}

#[test]
fn vp_schedule_oracles() {
    let s = VpSchedule::linear(1000, 1e-4, 0.02).unwrap();
    assert_eq!(s.alphabar(1), 1.0 - 1e-4);
    // Direct product loop, computed independently in numpy.
    let want = 4.035829765375676e-05;
    assert!(((s.alphabar(1000) - want) / want).abs() < 1e-12);
    let two = VpSchedule::linear(2, 0.1, 0.2).unwrap();
    assert!((two.alphabar(2) - 0.72).abs() < 1e-15);
    let sig: Vec<f64> = (1..=1000).map(|t| s.vp_to_ve_sigma(t).unwrap()).collect();
    assert!(sig.windows(2).all(|w| w[1] > w[0]));
    assert!(s.vp_to_ve_sigma(0).is_err() && s.vp_to_ve_sigma(1001).is_err());
}

#[test]
fn forward_model_noise_statistics() {
    use dpsw_core::operators::forward_model_with;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x0 = [0.3, -1.2];
    let n = 100_000;
    let mut sums = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let m = forward_model_with(&x0, &LinearOperator::Identity, 0.05, &mut rng).unwrap();
        for j in 0..2 {
            let r = m.y[j] - x0[j];
            sums[j] += r;
            sq[j] += r * r;
        }
    }
    let nf = n as f64;
    for j in 0..2 {
        let mean = sums[j] / nf;
        let sd = (sq[j] / nf - mean * mean).sqrt();
        assert!(mean.abs() < 3.0 * 0.05 / nf.sqrt());
        // SE of the sample std ≈ σ/√(2n).
        assert!((sd - 0.05).abs() < 3.0 * 0.05 / (2.0 * nf).sqrt());
    }
}
