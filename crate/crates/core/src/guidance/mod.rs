//! Score-level guidance: exact posterior scores, DPS and DPS-w.

mod dps;
mod exact;
mod strategy;

pub use dps::{
    dps_score, dps_terms, dps_w_weight, norm, tweedie_mean, zeta, DpsTerms, DpswWeight, NoiseLevel, ZetaMode,
};
pub use exact::{
    exact_denoising_score, exact_inpainting_score, exact_invertible_score, exact_noisy_likelihood_score,
    vp_denoising_score, vp_denoising_score_snapped, GuidanceOutput,
};
pub use strategy::{
    Dps, DpsW, ExactPosterior, Factory, Guidance, GuidanceRegistry, GuidanceSpec, GuidedScore, StepContext,
    Unconditional,
};
