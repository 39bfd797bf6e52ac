//! Guided diffusion sampling on analytic Gaussian-mixture priors.
//!
//! Exact posterior scores for denoising and inpainting, DPS and DPS-w
//! guidance, VP ancestral and VE Euler–Maruyama samplers, umbrella sampling
//! with WHAM, and posterior-sampler diagnostics.

pub mod diagnostics;
pub mod error;
pub mod gmm;
pub mod guidance;
pub mod operators;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod umbrella;

pub use error::{Error, Result};
pub use gmm::{Component, GaussianMixture, NoiseCov};
pub use guidance::{Guidance, GuidanceRegistry, GuidanceSpec};
pub use operators::{LinearOperator, Measurement};
pub use sampler::{build_sampler, Integrator, Sampler, Trajectory};
pub use schedule::{NoiseSchedule, ScheduleSpec, VeSchedule, VpSchedule};
