//! Tweedie estimates, the DPS likelihood approximation and the DPS-w weight.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::gmm::{GaussianMixture, NoiseCov};
use crate::guidance::exact::{exact_inpainting_score, exact_noisy_likelihood_score};
use crate::operators::{LinearOperator, Measurement};

/// Noise level of the current iterate, in either parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    Ve { sigma: f64 },
    Vp { alphabar: f64 },
}

/// Posterior mean `E[x₀ | x_t]`.
pub fn tweedie_mean(gmm: &GaussianMixture, x: &[f64], level: NoiseLevel) -> Result<Vec<f64>> {
    match level {
        NoiseLevel::Ve { sigma } => {
            let s2 = sigma * sigma;
            let s = gmm.score_perturbed(x, &NoiseCov::Isotropic(s2))?;
            Ok(x.iter().zip(&s).map(|(xi, si)| xi + s2 * si).collect())
        }
        NoiseLevel::Vp { alphabar } => {
            if !(alphabar > 0.0 && alphabar <= 1.0) {
                return Err(invalid("alphabar", format!("{alphabar} must lie in (0, 1]")));
            }
            let c = alphabar.sqrt();
            let s = gmm.scaled(c).score_perturbed(x, &NoiseCov::Isotropic(1.0 - alphabar))?;
            Ok(x.iter()
                .zip(&s)
                .map(|(xi, si)| (xi + (1.0 - alphabar) * si) / c)
                .collect())
        }
    }
}

/// Everything DPS needs at one VE noise level, computed once.
#[derive(Debug, Clone)]
pub struct DpsTerms {
    pub prior_score: Vec<f64>,
    pub x0_hat: Vec<f64>,
    /// `y − A x̂₀`.
    pub residual: Vec<f64>,
    /// `2 J Aᵀ (y − A x̂₀)` with `J = I + σ² H`, i.e. the DPS score at `ζ = 1`.
    pub s_ref: Vec<f64>,
}

pub fn dps_terms(gmm: &GaussianMixture, x_t: &[f64], measurement: &Measurement, sigma_t: f64) -> Result<DpsTerms> {
    let d = gmm.dim();
    check_len("x_t", d, x_t.len())?;
    check_len("measurement", d, measurement.dim())?;
    let s2 = sigma_t * sigma_t;
    let noise = NoiseCov::Isotropic(s2);
    let prior_score = gmm.score_perturbed(x_t, &noise)?;
    let hess = gmm.hessian_perturbed(x_t, &noise)?;
    let x0_hat: Vec<f64> = x_t.iter().zip(&prior_score).map(|(x, s)| x + s2 * s).collect();
    let residual = measurement.residual(&x0_hat);
    let g = DVector::from_vec(measurement.op.apply_transpose(&residual));
    let jg = &g + (hess * &g) * s2;
    let s_ref = jg.iter().map(|v| 2.0 * v).collect();
    Ok(DpsTerms {
        prior_score,
        x0_hat,
        residual,
        s_ref,
    })
}

/// Step-size rule for DPS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaMode {
    /// `ζ_t = ζ′`.
    Constant,
    /// `ζ_t = ζ′ / ‖y − A x̂₀‖`.
    ResidualNorm,
}

pub fn zeta(mode: ZetaMode, zeta_prime: f64, residual: &[f64]) -> f64 {
    match mode {
        ZetaMode::Constant => zeta_prime,
        ZetaMode::ResidualNorm => {
            let n = norm(residual);
            if n > 0.0 {
                zeta_prime / n
            } else {
                0.0
            }
        }
    }
}

/// DPS likelihood-score estimate `2 ζ_t J Aᵀ (y − A x̂₀)`.
pub fn dps_score(
    gmm: &GaussianMixture,
    x_t: &[f64],
    measurement: &Measurement,
    sigma_t: f64,
    mode: ZetaMode,
    zeta_prime: f64,
) -> Result<Vec<f64>> {
    let terms = dps_terms(gmm, x_t, measurement, sigma_t)?;
    let z = zeta(mode, zeta_prime, &terms.residual);
    Ok(terms.s_ref.iter().map(|v| z * v).collect())
}

/// Result of fitting the DPS-w weight on a reference measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DpswWeight {
    pub w: f64,
    /// Set when the projected reference DPS score vanished and `w` was forced to 0.
    pub degenerate: bool,
}

/// Least-squares weight `w = ⟨s_exact, s_ref⟩ / ‖s_ref‖²` matching the DPS
/// score to the exact noisy-likelihood score of a denoising reference.
///
/// For a mask reference the exact score is the inpainting likelihood score and
/// both vectors are restricted to observed coordinates.
/// `enhanced` rescales by `√(d / d_u)` and requires a mask.
pub fn dps_w_weight(
    gmm: &GaussianMixture,
    x_t: &[f64],
    reference: &Measurement,
    sigma_t: f64,
    enhanced: bool,
) -> Result<DpswWeight> {
    let d = gmm.dim();
    let projection: Option<&[f64]> = match &reference.op {
        LinearOperator::Identity => None,
        LinearOperator::Mask(m) => Some(m),
        LinearOperator::Diagonal(_) => return Err(invalid("reference", "operator must be identity or mask")),
    };
    if enhanced && projection.is_none() {
        return Err(invalid("enhanced", "requires a mask reference"));
    }
    let terms = dps_terms(gmm, x_t, reference, sigma_t)?;
    let exact = match projection {
        None => exact_noisy_likelihood_score(gmm, x_t, &reference.y, reference.sigma_y, sigma_t)?,
        Some(mask) => {
            let post = exact_inpainting_score(gmm, x_t, mask, &reference.y, reference.sigma_y, sigma_t)?;
            let prior = &terms.prior_score;
            (0..d).map(|j| post.posterior_score[j] - prior[j]).collect()
        }
    };
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..d {
        let p = projection.map_or(1.0, |m| m[j]);
        let r = p * terms.s_ref[j];
        num += p * exact[j] * r;
        den += r * r;
    }
    if den == 0.0 || !den.is_finite() {
        return Ok(DpswWeight {
            w: 0.0,
            degenerate: true,
        });
    }
    let mut w = num / den;
    if enhanced {
        let du = reference.op.observed(d);
        if du == 0 {
            return Ok(DpswWeight {
                w: 0.0,
                degenerate: true,
            });
        }
        w *= (d as f64 / du as f64).sqrt();
    }
    Ok(DpswWeight { w, degenerate: false })
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
