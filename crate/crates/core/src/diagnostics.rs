//! Posterior-sampler necessary conditions, summary statistics and the
//! guidance curves.

use std::sync::Mutex;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gmm::{GaussianMixture, NoiseCov};
use crate::guidance::{exact_denoising_score, DpsW, Guidance, GuidedScore, StepContext, Unconditional};
use crate::operators::{forward_model, LinearOperator, Measurement};
use crate::rng::{derive_seed2, rng_from_seed};
use crate::sampler::{map_indexed, Sampler};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided KS statistic of `samples` against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // Theta-function form converges fast for small x.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let mut cdf = 0.0;
        for j in 0..100 {
            let k = (2 * j + 1) as f64;
            let term = (-k * k * c).exp();
            cdf += term;
            if term < 1e-17 {
                break;
            }
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / x;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic KS p-value, with the usual small-sample adjustment of `√n`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// `(D, p)` for `samples` against `N(mean, sd²)`.
pub fn ks_test_normal(samples: &[f64], mean: f64, sd: f64) -> (f64, f64) {
    let d = ks_statistic(samples, |x| normal_cdf((x - mean) / sd));
    (d, ks_pvalue(d, samples.len()))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// 1-Wasserstein distance between two empirical distributions on the line.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        prev = next;
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDiagnostics {
    pub mse_mmse_ratio: f64,
    pub mse: f64,
    pub mmse: f64,
    pub residual_std: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    pub pearson_r: f64,
    pub n_conditions: usize,
    pub n_samples_per_condition: usize,
}

/// Necessary conditions for a posterior sampler on denoising problems.
///
/// Per condition: `x₀ ~ gmm`, `y = x₀ + σ_y η`, then `n_samples` posterior
/// draws. The first draw gives the squared error, the mean of the rest gives
/// the MMSE estimate. Residuals `y − x̂` are pooled over all draws and
/// coordinates for the normality and correlation checks.
#[allow(clippy::too_many_arguments)]
pub fn posterior_necessary_conditions(
    sampler: &dyn Sampler,
    guidance: &dyn Guidance,
    gmm: &GaussianMixture,
    sigma_y: f64,
    n_conditions: usize,
    n_samples: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<PosteriorDiagnostics> {
    if n_samples < 2 {
        return Err(invalid("n_samples", "must be >= 2"));
    }
    if n_conditions == 0 {
        return Err(invalid("n_conditions", "must be >= 1"));
    }
    if !(sigma_y > 0.0) {
        return Err(invalid("measurement.sigma_y", format!("{sigma_y} must be > 0")));
    }
    let d = gmm.dim();
    let conditions = (0..n_conditions)
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed2(master_seed, 0, c as u64));
            let x0 = gmm.sample_with(&mut rng);
            let y: Vec<f64> = x0
                .iter()
                .map(|v| v + sigma_y * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Measurement::new(y, LinearOperator::Identity, sigma_y).map(|m| (x0, m))
        })
        .collect::<Result<Vec<_>>>()?;
    guidance.validate(Some(&conditions[0].1), d)?;

    let draws = map_indexed(jobs, n_conditions * n_samples, |idx| {
        let (c, i) = (idx / n_samples, idx % n_samples);
        let seed = derive_seed2(master_seed, 1 + c as u64, i as u64);
        sampler
            .sample(gmm, guidance, Some(&conditions[c].1), seed, false)
            .map(|t| t.final_x)
    })?;

    let (mut mse, mut mmse) = (0.0, 0.0);
    let mut residuals = Vec::with_capacity(draws.len() * d);
    let mut values = Vec::with_capacity(draws.len() * d);
    for (c, (x0, m)) in conditions.iter().enumerate() {
        let block = &draws[c * n_samples..(c + 1) * n_samples];
        let rest = (n_samples - 1) as f64;
        for j in 0..d {
            mse += (block[0][j] - x0[j]).powi(2);
            let avg = block[1..].iter().map(|x| x[j]).sum::<f64>() / rest;
            mmse += (avg - x0[j]).powi(2);
        }
        for x in block {
            for j in 0..d {
                residuals.push(m.y[j] - x[j]);
                values.push(x[j]);
            }
        }
    }
    let (ks_d, ks_p) = ks_test_normal(&residuals, 0.0, sigma_y);
    Ok(PosteriorDiagnostics {
        mse_mmse_ratio: mse / mmse,
        mse: mse / (n_conditions * d) as f64,
        mmse: mmse / (n_conditions * d) as f64,
        residual_std: std_dev(&residuals),
        ks_statistic: ks_d,
        ks_pvalue: ks_p,
        pearson_r: pearson(&residuals, &values),
        n_conditions,
        n_samples_per_condition: n_samples,
    })
}

/// `(t, w_t)` along one DPS-w trajectory, labelled like the trajectory steps.
pub fn wt_curve(
    sampler: &dyn Sampler,
    gmm: &GaussianMixture,
    measurement: &Measurement,
    enhanced: bool,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let tr = sampler.sample(gmm, &DpsW { enhanced }, Some(measurement), seed, true)?;
    Ok(tr.w_series())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermRatioSeries {
    pub sigma_y: f64,
    /// `(t, log10(‖guidance term‖ / ‖prior term‖))`, `t` counting down from `N`.
    pub points: Vec<(usize, f64)>,
}

/// Runs the prior score while logging, at every visited noise level, the
/// term ratio of the exact denoising score for each `σ_y`.
#[derive(Debug)]
struct TermRatioProbe<'a> {
    y: &'a [f64],
    sigma_ys: &'a [f64],
    log: Mutex<Vec<Vec<f64>>>,
}

impl Guidance for TermRatioProbe<'_> {
    fn name(&self) -> &'static str {
        "term_ratio_probe"
    }

    fn validate(&self, _: Option<&Measurement>, dim: usize) -> Result<()> {
        crate::error::check_len("y", dim, self.y.len())
    }

    fn evaluate(&self, ctx: &StepContext<'_>) -> Result<GuidedScore> {
        let ratios = self
            .sigma_ys
            .iter()
            .map(|&sy| {
                exact_denoising_score(ctx.gmm, ctx.x, self.y, sy, ctx.sigma).map(|o| {
                    let g = crate::guidance::norm(&o.guidance_term);
                    let p = crate::guidance::norm(&o.prior_term);
                    (g / p).log10()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.log.lock().expect("probe lock").push(ratios);
        Unconditional.evaluate(ctx)
    }
}

/// Term ratios of the exact denoising score along one unconditional
/// trajectory. The same trajectory is used for every `σ_y`.
pub fn term_ratio_curve(
    sampler: &dyn Sampler,
    gmm: &GaussianMixture,
    y: &[f64],
    sigma_ys: &[f64],
    seed: u64,
) -> Result<Vec<TermRatioSeries>> {
    let probe = TermRatioProbe {
        y,
        sigma_ys,
        log: Mutex::new(Vec::new()),
    };
    sampler.sample(gmm, &probe, None, seed, false)?;
    let log = probe.log.into_inner().expect("probe lock");
    let n = log.len();
    Ok(sigma_ys
        .iter()
        .enumerate()
        .map(|(i, &sy)| TermRatioSeries {
            sigma_y: sy,
            points: log.iter().enumerate().map(|(k, r)| (n - k, r[i])).collect(),
        })
        .collect())
}

/// A measurement of the endpoint of one unconditional trajectory, so that
/// `(x₀, y)` is a joint draw and the trajectory itself is consistent with `y`.
/// The trajectory uses `seed`, the measurement noise a seed derived from it.
pub fn endpoint_measurement(
    sampler: &dyn Sampler,
    gmm: &GaussianMixture,
    op: &LinearOperator,
    sigma_y: f64,
    seed: u64,
) -> Result<Measurement> {
    let tr = sampler.sample(gmm, &Unconditional, None, seed, false)?;
    forward_model(&tr.final_x, op, sigma_y, derive_seed2(seed, 1, 0))
}

/// Prior-score norm at `x` and `σ`; convenience for reports.
pub fn prior_score_norm(gmm: &GaussianMixture, x: &[f64], sigma: f64) -> Result<f64> {
    gmm.score_perturbed(x, &NoiseCov::Isotropic(sigma * sigma))
        .map(|s| crate::guidance::norm(&s))
}
