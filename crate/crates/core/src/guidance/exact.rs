//! Exact posterior scores for denoising, inpainting and invertible diagonal
//! operators, expressed through the prior score at a shifted point and an
//! effective noise level.

use crate::error::{check_len, invalid, Result};
use crate::gmm::{GaussianMixture, NoiseCov};
use crate::schedule::{harmonic_var, tilde_cov_inpaint, tilde_params, VpSchedule};

/// A posterior score split into its prior-derived and linear-guidance parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceOutput {
    pub posterior_score: Vec<f64>,
    pub prior_term: Vec<f64>,
    pub guidance_term: Vec<f64>,
    /// DPS-w weight, when one was computed.
    pub w_t: Option<f64>,
}

impl GuidanceOutput {
    fn from_terms(prior_term: Vec<f64>, guidance_term: Vec<f64>) -> Self {
        let posterior_score = prior_term.iter().zip(&guidance_term).map(|(a, b)| a + b).collect();
        GuidanceOutput {
            posterior_score,
            prior_term,
            guidance_term,
            w_t: None,
        }
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be > 0")))
    }
}

/// Posterior score for `A = I`:
/// `σ_t⁻² σ̃² ∇log p_σ̃(x̃) − (σ_y² + σ_t²)⁻¹ (x_t − y)`.
pub fn exact_denoising_score(
    gmm: &GaussianMixture,
    x_t: &[f64],
    y: &[f64],
    sigma_y: f64,
    sigma_t: f64,
) -> Result<GuidanceOutput> {
    check_len("x_t", gmm.dim(), x_t.len())?;
    let p = tilde_params(y, x_t, sigma_y, sigma_t)?;
    let scale = p.sigma_tilde_sq / (sigma_t * sigma_t);
    let prior_score = gmm.score_perturbed(&p.x_tilde, &NoiseCov::Isotropic(p.sigma_tilde_sq))?;
    let prior_term = prior_score.iter().map(|s| scale * s).collect();
    let guidance_term = x_t.iter().zip(y).map(|(x, yi)| -(x - yi) / p.guidance_var).collect();
    Ok(GuidanceOutput::from_terms(prior_term, guidance_term))
}

/// Posterior score for a 0/1 mask `A`, using the non-isotropic score at
/// `x̃ = Σ̃ (σ_y⁻² A y + σ_t⁻² x_t)`. `sigma_y = 0` is the noiseless limit in
/// which observed coordinates are not noised at all.
pub fn exact_inpainting_score(
    gmm: &GaussianMixture,
    x_t: &[f64],
    mask: &[f64],
    y: &[f64],
    sigma_y: f64,
    sigma_t: f64,
) -> Result<GuidanceOutput> {
    let d = gmm.dim();
    check_len("x_t", d, x_t.len())?;
    check_len("mask", d, mask.len())?;
    check_len("y", d, y.len())?;
    check_positive("sigma_t", sigma_t)?;
    let cov = tilde_cov_inpaint(mask, sigma_y, sigma_t)?;
    let st2 = sigma_t * sigma_t;
    let sy2 = sigma_y * sigma_y;

    let x_tilde: Vec<f64> = (0..d)
        .map(|j| {
            if mask[j] == 0.0 {
                x_t[j]
            } else if sigma_y == 0.0 {
                y[j]
            } else {
                cov.at(j) * (y[j] / sy2 + x_t[j] / st2)
            }
        })
        .collect();
    let score = gmm.score_perturbed(&x_tilde, &cov)?;
    let prior_term = (0..d).map(|j| cov.at(j) / st2 * score[j]).collect();
    let gv = sy2 + st2;
    let guidance_term = (0..d).map(|j| -mask[j] * (x_t[j] - y[j]) / gv).collect();
    Ok(GuidanceOutput::from_terms(prior_term, guidance_term))
}

/// Posterior score for an invertible diagonal `A = diag(d)`, the general form
/// from which both the denoising and (as `d_i → 0`) inpainting scores follow.
pub fn exact_invertible_score(
    gmm: &GaussianMixture,
    x_t: &[f64],
    diag: &[f64],
    y: &[f64],
    sigma_y: f64,
    sigma_t: f64,
) -> Result<GuidanceOutput> {
    let n = gmm.dim();
    check_len("x_t", n, x_t.len())?;
    check_len("operator", n, diag.len())?;
    check_len("y", n, y.len())?;
    check_positive("sigma_y", sigma_y)?;
    check_positive("sigma_t", sigma_t)?;
    if diag.contains(&0.0) {
        return Err(invalid("diagonal", "entries must be nonzero"));
    }
    let sy2 = sigma_y * sigma_y;
    let st2 = sigma_t * sigma_t;
    let cov: Vec<f64> = diag.iter().map(|dj| harmonic_var(sy2 / (dj * dj), st2)).collect();
    let mu: Vec<f64> = (0..n).map(|j| cov[j] * (diag[j] * y[j] / sy2 + x_t[j] / st2)).collect();
    let score = gmm.score_perturbed(&mu, &NoiseCov::Diagonal(cov.clone()))?;
    let prior_term = (0..n).map(|j| cov[j] / st2 * score[j]).collect();
    let guidance_term = (0..n)
        .map(|j| {
            let dj = diag[j];
            -(x_t[j] - y[j] / dj) / (sy2 / (dj * dj) + st2)
        })
        .collect();
    Ok(GuidanceOutput::from_terms(prior_term, guidance_term))
}

/// Exact noisy-likelihood score `∇ log p_t(y | x_t)` for denoising: the
/// posterior score minus the unconditional score.
pub fn exact_noisy_likelihood_score(
    gmm: &GaussianMixture,
    x_t: &[f64],
    y: &[f64],
    sigma_y: f64,
    sigma_t: f64,
) -> Result<Vec<f64>> {
    let post = exact_denoising_score(gmm, x_t, y, sigma_y, sigma_t)?;
    let prior = gmm.score_perturbed(x_t, &NoiseCov::Isotropic(sigma_t * sigma_t))?;
    Ok(post
        .prior_term
        .iter()
        .zip(&prior)
        .zip(&post.guidance_term)
        .map(|((a, p), g)| a - p + g)
        .collect())
}

/// VP-coordinate denoising posterior score written directly in `ᾱ_t`:
/// `ᾱ/(1−ᾱ) σ̃² ∇_μ log q(μ) − ᾱ⁻¹ (σ_y² + (1−ᾱ)/ᾱ)⁻¹ (x_t − √ᾱ y)`,
/// with `μ = √ᾱ x̃` and `q` the prior scaled by `√ᾱ` under noise `ᾱ σ̃²`.
pub fn vp_denoising_score(
    gmm: &GaussianMixture,
    x_t: &[f64],
    y: &[f64],
    sigma_y: f64,
    alphabar: f64,
) -> Result<GuidanceOutput> {
    vp_denoising_inner(gmm, x_t, y, sigma_y, alphabar, None)
}

/// Same as [`vp_denoising_score`] but with the prior term taken from the
/// schedule's own marginal `p_τ` at the step whose `1 − ᾱ_τ` is nearest to
/// `ᾱ_t σ̃²`, the way a discrete-time score model would be queried.
pub fn vp_denoising_score_snapped(
    gmm: &GaussianMixture,
    x_t: &[f64],
    y: &[f64],
    sigma_y: f64,
    alphabar: f64,
    schedule: &VpSchedule,
) -> Result<GuidanceOutput> {
    vp_denoising_inner(gmm, x_t, y, sigma_y, alphabar, Some(schedule))
}

fn vp_denoising_inner(
    gmm: &GaussianMixture,
    x_t: &[f64],
    y: &[f64],
    sigma_y: f64,
    alphabar: f64,
    snap: Option<&VpSchedule>,
) -> Result<GuidanceOutput> {
    check_len("x_t", gmm.dim(), x_t.len())?;
    check_len("y", gmm.dim(), y.len())?;
    check_positive("sigma_y", sigma_y)?;
    if !(alphabar > 0.0 && alphabar < 1.0) {
        return Err(invalid("alphabar", format!("{alphabar} must lie in (0, 1)")));
    }
    let sy2 = sigma_y * sigma_y;
    let snr = alphabar / (1.0 - alphabar);
    let s2 = 1.0 / (1.0 / sy2 + snr);
    let sqrt_ab = alphabar.sqrt();
    let mu: Vec<f64> = y
        .iter()
        .zip(x_t)
        .map(|(yi, xi)| sqrt_ab * s2 * (yi / sy2 + sqrt_ab / (1.0 - alphabar) * xi))
        .collect();
    let q_score = match snap {
        None => gmm
            .scaled(sqrt_ab)
            .score_perturbed(&mu, &NoiseCov::Isotropic(alphabar * s2))?,
        Some(schedule) => {
            let tau = schedule.nearest_step(1.0 - alphabar * s2);
            let ab_tau = schedule.alphabar(tau);
            gmm.scaled(ab_tau.sqrt())
                .score_perturbed(&mu, &NoiseCov::Isotropic(1.0 - ab_tau))?
        }
    };
    let prior_term = q_score.iter().map(|s| snr * s2 * s).collect();
    let gv = sy2 + 1.0 / snr;
    let guidance_term = x_t
        .iter()
        .zip(y)
        .map(|(x, yi)| -(x - sqrt_ab * yi) / (alphabar * gv))
        .collect();
    Ok(GuidanceOutput::from_terms(prior_term, guidance_term))
}
