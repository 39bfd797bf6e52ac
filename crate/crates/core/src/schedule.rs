//! VE and VP noise schedules, the effective-noise reparameterization of the
//! denoising/inpainting posteriors, and the VP→VE change of variables.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::gmm::NoiseCov;

/// Variance-exploding ladder `σ_1 < σ_2 < … < σ_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct VeSchedule {
    sigmas: Vec<f64>,
}

impl VeSchedule {
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(invalid("steps", "need at least 2 noise levels"));
        }
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("sigmas", "noise levels must be positive"));
        }
        if sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("sigmas", "noise levels must be strictly increasing in t"));
        }
        Ok(VeSchedule { sigmas })
    }

    /// Geometric spacing between `sigma_min` and `sigma_max`.
    pub fn geometric(steps: usize, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_max > sigma_min) {
            return Err(invalid("sigma_min", "require 0 < sigma_min < sigma_max"));
        }
        if steps < 2 {
            return Err(invalid("steps", "must be >= 2"));
        }
        let ratio = (sigma_max / sigma_min).ln();
        let sigmas = (0..steps)
            .map(|i| sigma_min * (ratio * i as f64 / (steps - 1) as f64).exp())
            .collect();
        Self::new(sigmas)
    }

    pub fn steps(&self) -> usize {
        self.sigmas.len()
    }

    /// `σ_t` for `t` in `0..=N`, with `σ_0 = 0`.
    pub fn sigma(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.sigmas[t - 1]
        }
    }

    pub fn sigma_max(&self) -> f64 {
        *self.sigmas.last().expect("non-empty")
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Variance-preserving (DDPM) schedule with `ᾱ_t = Π_{s≤t} (1 − β_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VpSchedule {
    betas: Vec<f64>,
    alphabars: Vec<f64>,
}

impl VpSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(invalid("steps", "must be >= 2"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(invalid("betas", "each beta must lie in (0, 1)"));
        }
        let mut acc = 1.0;
        let alphabars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(VpSchedule { betas, alphabars })
    }

    /// Linear betas from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
            return Err(invalid(
                "beta_min",
                format!("require 0 < beta_min < beta_max < 1, got ({beta_min}, {beta_max})"),
            ));
        }
        if steps < 2 {
            return Err(invalid("steps", "must be >= 2"));
        }
        let betas = (0..steps)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    /// Keeps `steps` evenly spaced timesteps of this schedule (including the
    /// first and last) and recomputes betas so the retained `ᾱ` values are
    /// reproduced exactly.
    pub fn respaced(&self, steps: usize) -> Result<Self> {
        let n = self.steps();
        if steps < 2 || steps > n {
            return Err(invalid("steps", format!("respacing needs 2 <= steps <= {n}")));
        }
        let mut prev = 1.0;
        let betas = (0..steps)
            .map(|k| {
                let t = 1 + ((k * (n - 1)) as f64 / (steps - 1) as f64).round() as usize;
                let ab = self.alphabars[t - 1];
                let beta = 1.0 - ab / prev;
                prev = ab;
                beta
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `ᾱ_t` for `t` in `0..=N`, with `ᾱ_0 = 1`.
    pub fn alphabar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alphabars[t - 1]
        }
    }

    /// `β_t` for `t` in `1..=N`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphabars(&self) -> &[f64] {
        &self.alphabars
    }

    /// VE-equivalent noise level `√((1 − ᾱ_t)/ᾱ_t)`.
    pub fn vp_to_ve_sigma(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange { t, n: self.steps() });
        }
        Ok(alphabar_to_sigma(self.alphabar(t)))
    }

    /// The VE ladder visited by this process after the change of variables.
    pub fn to_ve(&self) -> VeSchedule {
        VeSchedule {
            sigmas: self.alphabars.iter().map(|&a| alphabar_to_sigma(a)).collect(),
        }
    }

    /// Timestep whose `ᾱ` is closest to `alphabar`.
    pub fn nearest_step(&self, alphabar: f64) -> usize {
        let mut best = 1;
        let mut err = f64::INFINITY;
        for (i, a) in self.alphabars.iter().enumerate() {
            let e = (a - alphabar).abs();
            if e < err {
                err = e;
                best = i + 1;
            }
        }
        best
    }
}

pub fn alphabar_to_sigma(alphabar: f64) -> f64 {
    ((1.0 - alphabar) / alphabar).sqrt()
}

pub fn sigma_to_alphabar(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma)
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSchedule {
    Ve(VeSchedule),
    Vp(VpSchedule),
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        match self {
            NoiseSchedule::Ve(s) => s.steps(),
            NoiseSchedule::Vp(s) => s.steps(),
        }
    }

    /// VE noise level at step `t` under either convention.
    pub fn ve_sigma(&self, t: usize) -> f64 {
        match self {
            NoiseSchedule::Ve(s) => s.sigma(t),
            NoiseSchedule::Vp(s) => alphabar_to_sigma(s.alphabar(t)),
        }
    }

    pub fn to_ve(&self) -> VeSchedule {
        match self {
            NoiseSchedule::Ve(s) => s.clone(),
            NoiseSchedule::Vp(s) => s.to_ve(),
        }
    }
}

/// The `process` field of a schedule spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    Ve,
    Vp,
}

/// Schedule description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub process: Process,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
    /// Length of the linear schedule a shorter VP run is respaced from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
}

impl ScheduleSpec {
    pub fn vp(steps: usize) -> Self {
        ScheduleSpec {
            process: Process::Vp,
            steps,
            beta_min: Some(1e-4),
            beta_max: Some(0.02),
            base_steps: Some(1000.max(steps)),
            sigma_min: None,
            sigma_max: None,
        }
    }

    pub fn ve(steps: usize, sigma_min: f64, sigma_max: f64) -> Self {
        ScheduleSpec {
            process: Process::Ve,
            steps,
            beta_min: None,
            beta_max: None,
            base_steps: None,
            sigma_min: Some(sigma_min),
            sigma_max: Some(sigma_max),
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.process {
            Process::Vp => {
                let base = self.base_steps.unwrap_or(self.steps);
                let lin = VpSchedule::linear(base, self.beta_min.unwrap_or(1e-4), self.beta_max.unwrap_or(0.02))?;
                let s = if base == self.steps {
                    lin
                } else {
                    lin.respaced(self.steps)?
                };
                Ok(NoiseSchedule::Vp(s))
            }
            Process::Ve => Ok(NoiseSchedule::Ve(VeSchedule::geometric(
                self.steps,
                self.sigma_min.unwrap_or(0.01),
                self.sigma_max.unwrap_or(20.0),
            )?)),
        }
    }
}

/// Effective noise level and precision-weighted point of the denoising
/// posterior at one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeParams {
    /// `(σ_y⁻² + σ_t⁻²)⁻¹`
    pub sigma_tilde_sq: f64,
    /// `σ̃² (σ_y⁻² y + σ_t⁻² x_t)`
    pub x_tilde: Vec<f64>,
    /// `σ_y² + σ_t²`
    pub guidance_var: f64,
}

#[inline]
pub(crate) fn harmonic_var(a2: f64, b2: f64) -> f64 {
    1.0 / (1.0 / a2 + 1.0 / b2)
}

pub fn tilde_params(y: &[f64], x_t: &[f64], sigma_y: f64, sigma_t: f64) -> Result<TildeParams> {
    if !(sigma_y > 0.0 && sigma_y.is_finite()) {
        return Err(invalid("sigma_y", format!("{sigma_y} must be > 0")));
    }
    if !(sigma_t > 0.0 && sigma_t.is_finite()) {
        return Err(invalid("sigma_t", format!("{sigma_t} must be > 0")));
    }
    check_len("x_t", y.len(), x_t.len())?;
    let sy2 = sigma_y * sigma_y;
    let st2 = sigma_t * sigma_t;
    let s2 = harmonic_var(sy2, st2);
    let wy = s2 / sy2;
    let wx = s2 / st2;
    let x_tilde = y.iter().zip(x_t).map(|(yi, xi)| wy * yi + wx * xi).collect();
    Ok(TildeParams {
        sigma_tilde_sq: s2,
        x_tilde,
        guidance_var: sy2 + st2,
    })
}

/// `Σ̃ = (σ_y⁻² A + σ_t⁻² I)⁻¹` for a 0/1 mask `A`. Observed coordinates get
/// the harmonic variance (zero when `σ_y = 0`), masked ones keep `σ_t²`.
pub fn tilde_cov_inpaint(mask: &[f64], sigma_y: f64, sigma_t: f64) -> Result<NoiseCov> {
    if !(sigma_y >= 0.0 && sigma_y.is_finite()) {
        return Err(invalid("sigma_y", format!("{sigma_y} must be >= 0")));
    }
    if !(sigma_t > 0.0 && sigma_t.is_finite()) {
        return Err(invalid("sigma_t", format!("{sigma_t} must be > 0")));
    }
    let st2 = sigma_t * sigma_t;
    if mask.iter().all(|m| *m == 0.0) {
        return Ok(NoiseCov::Isotropic(st2));
    }
    let observed = if sigma_y == 0.0 {
        0.0
    } else {
        harmonic_var(sigma_y * sigma_y, st2)
    };
    mask.iter()
        .map(|&m| {
            if m == 1.0 {
                Ok(observed)
            } else if m == 0.0 {
                Ok(st2)
            } else {
                Err(invalid("mask", format!("entry {m} is not 0 or 1")))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(NoiseCov::Diagonal)
}
