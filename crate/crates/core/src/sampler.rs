//! Reverse-diffusion samplers with pluggable guidance.
//!
//! Both integrators evaluate guidance in VE coordinates. The VP ancestral
//! sampler converts its iterate with `x_VE = x_VP / √ᾱ_t` and rescales the
//! returned scores by `1/√ᾱ_t`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::gmm::GaussianMixture;
use crate::guidance::{Guidance, StepContext};
use crate::operators::Measurement;
use crate::rng::{derive_seed, rng_from_seed};
use crate::schedule::{alphabar_to_sigma, NoiseSchedule, VeSchedule, VpSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub x: Vec<f64>,
    pub w_t: Option<f64>,
    pub guidance_norm: f64,
    pub prior_norm: f64,
}

/// One reverse-diffusion run. `steps` is empty unless recording was requested;
/// otherwise it runs from `t = N − 1` down to `0` and `final_x` equals the last `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_x: Vec<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn w_series(&self) -> Vec<(usize, f64)> {
        self.steps.iter().filter_map(|s| s.w_t.map(|w| (s.t, w))).collect()
    }
}

pub trait Sampler: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn steps(&self) -> usize;

    fn sample(
        &self,
        gmm: &GaussianMixture,
        guidance: &dyn Guidance,
        measurement: Option<&Measurement>,
        seed: u64,
        record: bool,
    ) -> Result<Trajectory>;
}

fn standard_normal<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_step(stage: &'static str, step: usize, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical {
            stage,
            step,
            reason: "non-finite iterate".into(),
        })
    }
}

fn preflight(gmm: &GaussianMixture, guidance: &dyn Guidance, measurement: Option<&Measurement>) -> Result<()> {
    if let Some(m) = measurement {
        check_len("measurement", gmm.dim(), m.dim())?;
    }
    guidance.validate(measurement, gmm.dim())
}

/// DDPM ancestral sampling on a VP schedule with the fixed small posterior
/// variance; DPS-type corrections are applied after the posterior-mean step.
#[derive(Debug, Clone, PartialEq)]
pub struct VpAncestral {
    pub schedule: VpSchedule,
}

impl Sampler for VpAncestral {
    fn name(&self) -> &'static str {
        "vp_ancestral"
    }

    fn steps(&self) -> usize {
        self.schedule.steps()
    }

    fn sample(
        &self,
        gmm: &GaussianMixture,
        guidance: &dyn Guidance,
        measurement: Option<&Measurement>,
        seed: u64,
        record: bool,
    ) -> Result<Trajectory> {
        preflight(gmm, guidance, measurement)?;
        let d = gmm.dim();
        let s = &self.schedule;
        let n = s.steps();
        let mut rng = rng_from_seed(seed);
        let mut x = standard_normal(&mut rng, d);
        let mut steps = Vec::with_capacity(if record { n } else { 0 });

        for t in (1..=n).rev() {
            let ab = s.alphabar(t);
            let ab_prev = s.alphabar(t - 1);
            let beta = s.beta(t);
            let c = ab.sqrt();
            let x_ve: Vec<f64> = x.iter().map(|v| v / c).collect();
            let g = guidance.evaluate(&StepContext {
                gmm,
                x: &x_ve,
                sigma: alphabar_to_sigma(ab),
                measurement,
            })?;

            let coef_x = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab);
            let noise_sd = ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt();
            let z = if t > 1 {
                Some(standard_normal(&mut rng, d))
            } else {
                None
            };
            for j in 0..d {
                let s_vp = g.score[j] / c;
                let x0_hat = (x[j] + (1.0 - ab) * s_vp) / c;
                let mut next = coef_x * x[j] + coef_x0 * x0_hat;
                if let Some(z) = &z {
                    next += noise_sd * z[j];
                }
                if let Some(corr) = &g.correction {
                    next += corr[j] / c;
                }
                x[j] = next;
            }
            check_step("vp ancestral sampler", t - 1, &x)?;
            if record {
                steps.push(TrajectoryStep {
                    t: t - 1,
                    x: x.clone(),
                    w_t: g.w_t,
                    guidance_norm: g.guidance_norm,
                    prior_norm: g.prior_norm,
                });
            }
        }
        Ok(Trajectory {
            steps,
            final_x: x,
            seed,
        })
    }
}

/// Euler–Maruyama discretization of the VE reverse SDE. Guidance corrections
/// are added to the score before the drift step.
#[derive(Debug, Clone, PartialEq)]
pub struct VeEulerMaruyama {
    pub schedule: VeSchedule,
}

impl Sampler for VeEulerMaruyama {
    fn name(&self) -> &'static str {
        "ve_euler_maruyama"
    }

    fn steps(&self) -> usize {
        self.schedule.steps()
    }

    fn sample(
        &self,
        gmm: &GaussianMixture,
        guidance: &dyn Guidance,
        measurement: Option<&Measurement>,
        seed: u64,
        record: bool,
    ) -> Result<Trajectory> {
        preflight(gmm, guidance, measurement)?;
        let d = gmm.dim();
        let s = &self.schedule;
        let n = s.steps();
        let mut rng = rng_from_seed(seed);
        let smax = s.sigma_max();
        let mut x: Vec<f64> = standard_normal(&mut rng, d).into_iter().map(|z| smax * z).collect();
        let mut steps = Vec::with_capacity(if record { n } else { 0 });

        for i in (1..=n).rev() {
            let si = s.sigma(i);
            let sp = s.sigma(i - 1);
            let delta = si * si - sp * sp;
            let g = guidance.evaluate(&StepContext {
                gmm,
                x: &x,
                sigma: si,
                measurement,
            })?;
            let z = if i > 1 {
                Some(standard_normal(&mut rng, d))
            } else {
                None
            };
            let sd = delta.sqrt();
            for j in 0..d {
                let mut score = g.score[j];
                if let Some(corr) = &g.correction {
                    score += corr[j];
                }
                x[j] += delta * score;
                if let Some(z) = &z {
                    x[j] += sd * z[j];
                }
            }
            check_step("ve sampler", i - 1, &x)?;
            if record {
                steps.push(TrajectoryStep {
                    t: i - 1,
                    x: x.clone(),
                    w_t: g.w_t,
                    guidance_norm: g.guidance_norm,
                    prior_norm: g.prior_norm,
                });
            }
        }
        Ok(Trajectory {
            steps,
            final_x: x,
            seed,
        })
    }
}

/// Which integrator to pair with a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Ancestral for VP schedules, Euler–Maruyama for VE schedules.
    #[default]
    Auto,
    Ancestral,
    /// For VP schedules, integrates on the equivalent VE ladder.
    EulerMaruyama,
}

pub fn build_sampler(schedule: &NoiseSchedule, integrator: Integrator) -> Result<Box<dyn Sampler>> {
    match (schedule, integrator) {
        (NoiseSchedule::Vp(s), Integrator::Auto | Integrator::Ancestral) => {
            Ok(Box::new(VpAncestral { schedule: s.clone() }))
        }
        (NoiseSchedule::Ve(_), Integrator::Ancestral) => {
            Err(invalid("integrator", "ancestral sampling requires a vp schedule"))
        }
        (s, _) => Ok(Box::new(VeEulerMaruyama { schedule: s.to_ve() })),
    }
}

/// Runs `f(i)` for `i` in `0..n`, in parallel when `jobs > 1`. Results are
/// returned in index order and the first error by index wins, so output does
/// not depend on `jobs`.
pub fn map_indexed<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if jobs <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid("jobs", e.to_string()))?;
    let results: Vec<Result<T>> = pool.install(|| (0..n).into_par_iter().map(&f).collect());
    results.into_iter().collect()
}

/// `n` independent trajectories with seeds derived from `(master_seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_batch(
    sampler: &dyn Sampler,
    gmm: &GaussianMixture,
    guidance: &dyn Guidance,
    measurement: Option<&Measurement>,
    master_seed: u64,
    n: usize,
    jobs: usize,
    record: bool,
) -> Result<Vec<Trajectory>> {
    map_indexed(jobs, n, |i| {
        sampler.sample(gmm, guidance, measurement, derive_seed(master_seed, i as u64), record)
    })
}
