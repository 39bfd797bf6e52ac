//! Guidance methods as interchangeable strategies, looked up by name.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gmm::{GaussianMixture, NoiseCov};
use crate::guidance::dps::{dps_terms, dps_w_weight, norm, zeta, ZetaMode};
use crate::guidance::exact::{exact_denoising_score, exact_inpainting_score, exact_invertible_score};
use crate::operators::{LinearOperator, Measurement};

/// Inputs for one guidance evaluation, in VE coordinates.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub gmm: &'a GaussianMixture,
    pub x: &'a [f64],
    pub sigma: f64,
    pub measurement: Option<&'a Measurement>,
}

/// What a strategy hands back to the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedScore {
    /// Score that drives the Tweedie estimate and drift.
    pub score: Vec<f64>,
    /// Extra likelihood-score step applied after the base update.
    pub correction: Option<Vec<f64>>,
    pub w_t: Option<f64>,
    pub degenerate: bool,
    pub prior_norm: f64,
    pub guidance_norm: f64,
}

pub trait Guidance: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Checks the measurement against what the method supports.
    fn validate(&self, measurement: Option<&Measurement>, dim: usize) -> Result<()>;

    fn evaluate(&self, ctx: &StepContext<'_>) -> Result<GuidedScore>;
}

fn require<'a>(m: Option<&'a Measurement>, method: &str) -> Result<&'a Measurement> {
    m.ok_or_else(|| invalid("measurement", format!("method `{method}` needs a measurement")))
}

fn check_measurement(m: &Measurement, dim: usize) -> Result<()> {
    crate::error::check_len("measurement", dim, m.dim())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Unconditional;

impl Guidance for Unconditional {
    fn name(&self) -> &'static str {
        "none"
    }

    fn validate(&self, _: Option<&Measurement>, _: usize) -> Result<()> {
        Ok(())
    }

    fn evaluate(&self, ctx: &StepContext<'_>) -> Result<GuidedScore> {
        let score = ctx
            .gmm
            .score_perturbed(ctx.x, &NoiseCov::Isotropic(ctx.sigma * ctx.sigma))?;
        Ok(GuidedScore {
            prior_norm: norm(&score),
            score,
            correction: None,
            w_t: None,
            degenerate: false,
            guidance_norm: 0.0,
        })
    }
}

/// Exact posterior score substituted for the prior score.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactPosterior;

impl Guidance for ExactPosterior {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn validate(&self, measurement: Option<&Measurement>, dim: usize) -> Result<()> {
        let m = require(measurement, self.name())?;
        check_measurement(m, dim)?;
        if m.sigma_y == 0.0 && !matches!(m.op, LinearOperator::Mask(_)) {
            return Err(invalid(
                "measurement.sigma_y",
                "must be > 0 unless the operator is a mask",
            ));
        }
        Ok(())
    }

    fn evaluate(&self, ctx: &StepContext<'_>) -> Result<GuidedScore> {
        let m = require(ctx.measurement, self.name())?;
        let out = match &m.op {
            LinearOperator::Identity => exact_denoising_score(ctx.gmm, ctx.x, &m.y, m.sigma_y, ctx.sigma)?,
            LinearOperator::Mask(mask) => exact_inpainting_score(ctx.gmm, ctx.x, mask, &m.y, m.sigma_y, ctx.sigma)?,
            LinearOperator::Diagonal(d) => exact_invertible_score(ctx.gmm, ctx.x, d, &m.y, m.sigma_y, ctx.sigma)?,
        };
        Ok(GuidedScore {
            prior_norm: norm(&out.prior_term),
            guidance_norm: norm(&out.guidance_term),
            score: out.posterior_score,
            correction: None,
            w_t: None,
            degenerate: false,
        })
    }
}

/// Prior score plus the DPS likelihood step `ζ_t · 2 J Aᵀ(y − A x̂₀)`.
#[derive(Debug, Clone, Copy)]
pub struct Dps {
    pub zeta_prime: f64,
    pub mode: ZetaMode,
}

impl Guidance for Dps {
    fn name(&self) -> &'static str {
        "dps"
    }

    fn validate(&self, measurement: Option<&Measurement>, dim: usize) -> Result<()> {
        check_measurement(require(measurement, self.name())?, dim)
    }

    fn evaluate(&self, ctx: &StepContext<'_>) -> Result<GuidedScore> {
        let m = require(ctx.measurement, self.name())?;
        let terms = dps_terms(ctx.gmm, ctx.x, m, ctx.sigma)?;
        let z = zeta(self.mode, self.zeta_prime, &terms.residual);
        let correction: Vec<f64> = terms.s_ref.iter().map(|v| z * v).collect();
        Ok(GuidedScore {
            prior_norm: norm(&terms.prior_score),
            guidance_norm: norm(&correction),
            score: terms.prior_score,
            correction: Some(correction),
            w_t: None,
            degenerate: false,
        })
    }
}

/// DPS with the step weight fit against the exact likelihood score.
#[derive(Debug, Clone, Copy, Default)]
pub struct DpsW {
    pub enhanced: bool,
}

impl Guidance for DpsW {
    fn name(&self) -> &'static str {
        "dpsw"
    }

    fn validate(&self, measurement: Option<&Measurement>, dim: usize) -> Result<()> {
        let m = require(measurement, self.name())?;
        check_measurement(m, dim)?;
        match (&m.op, self.enhanced) {
            (LinearOperator::Diagonal(_), _) => Err(invalid(
                "measurement.operator",
                "dpsw supports identity or mask operators",
            )),
            (LinearOperator::Identity, true) => Err(invalid("guidance.enhanced", "only valid with mask operators")),
            (LinearOperator::Identity, false) if m.sigma_y == 0.0 => Err(invalid(
                "measurement.sigma_y",
                "must be > 0 for the denoising reference",
            )),
            _ => Ok(()),
        }
    }

    fn evaluate(&self, ctx: &StepContext<'_>) -> Result<GuidedScore> {
        let m = require(ctx.measurement, self.name())?;
        let terms = dps_terms(ctx.gmm, ctx.x, m, ctx.sigma)?;
        let w = dps_w_weight(ctx.gmm, ctx.x, m, ctx.sigma, self.enhanced)?;
        let correction: Vec<f64> = terms.s_ref.iter().map(|v| w.w * v).collect();
        Ok(GuidedScore {
            prior_norm: norm(&terms.prior_score),
            guidance_norm: norm(&correction),
            score: terms.prior_score,
            correction: Some(correction),
            w_t: Some(w.w),
            degenerate: w.degenerate,
        })
    }
}

/// Config form: `{"method": "exact"|"dps"|"dpsw"|"none", "zeta_prime"?, "zeta_mode"?, "enhanced"?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSpec {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta_mode: Option<ZetaMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhanced: Option<bool>,
}

impl GuidanceSpec {
    pub fn method(name: &str) -> Self {
        GuidanceSpec {
            method: name.to_string(),
            zeta_prime: None,
            zeta_mode: None,
            enhanced: None,
        }
    }

    pub fn dps(zeta_prime: f64, mode: ZetaMode) -> Self {
        GuidanceSpec {
            zeta_prime: Some(zeta_prime),
            zeta_mode: Some(mode),
            ..Self::method("dps")
        }
    }

    pub fn dpsw(enhanced: bool) -> Self {
        GuidanceSpec {
            enhanced: Some(enhanced),
            ..Self::method("dpsw")
        }
    }

    pub fn build(&self) -> Result<Box<dyn Guidance>> {
        GuidanceRegistry::with_builtins().build(self)
    }
}

pub type Factory = fn(&GuidanceSpec) -> Result<Box<dyn Guidance>>;

/// Name → constructor table for guidance strategies.
#[derive(Clone)]
pub struct GuidanceRegistry {
    factories: BTreeMap<String, Factory>,
    aliases: BTreeMap<String, String>,
}

impl fmt::Debug for GuidanceRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuidanceRegistry")
            .field("methods", &self.names())
            .finish()
    }
}

fn build_none(spec: &GuidanceSpec) -> Result<Box<dyn Guidance>> {
    reject_params(spec, false, false)?;
    Ok(Box::new(Unconditional))
}

fn build_exact(spec: &GuidanceSpec) -> Result<Box<dyn Guidance>> {
    reject_params(spec, false, false)?;
    Ok(Box::new(ExactPosterior))
}

fn build_dps(spec: &GuidanceSpec) -> Result<Box<dyn Guidance>> {
    reject_params(spec, true, false)?;
    let zeta_prime = spec.zeta_prime.unwrap_or(1.0);
    // ζ′ = 0 is accepted; it reproduces unguided sampling exactly.
    if !(zeta_prime >= 0.0 && zeta_prime.is_finite()) {
        return Err(invalid("guidance.zeta_prime", format!("{zeta_prime} must be >= 0")));
    }
    Ok(Box::new(Dps {
        zeta_prime,
        mode: spec.zeta_mode.unwrap_or(ZetaMode::Constant),
    }))
}

fn build_dpsw(spec: &GuidanceSpec) -> Result<Box<dyn Guidance>> {
    reject_params(spec, false, true)?;
    Ok(Box::new(DpsW {
        enhanced: spec.enhanced.unwrap_or(false),
    }))
}

fn reject_params(spec: &GuidanceSpec, zeta: bool, enhanced: bool) -> Result<()> {
    if !zeta && (spec.zeta_prime.is_some() || spec.zeta_mode.is_some()) {
        return Err(invalid("guidance.zeta_prime", format!("not used by `{}`", spec.method)));
    }
    if !enhanced && spec.enhanced.is_some() {
        return Err(invalid("guidance.enhanced", format!("not used by `{}`", spec.method)));
    }
    Ok(())
}

impl GuidanceRegistry {
    pub fn empty() -> Self {
        GuidanceRegistry {
            factories: BTreeMap::new(),
            aliases: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("none", build_none);
        r.register("exact", build_exact);
        r.register("dps", build_dps);
        r.register("dpsw", build_dpsw);
        r.alias("unconditional", "none");
        r.alias("exact_posterior", "exact");
        r.alias("dps_w", "dpsw");
        r
    }

    pub fn register(&mut self, name: &str, factory: Factory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn alias(&mut self, alias: &str, target: &str) {
        self.aliases.insert(alias.to_string(), target.to_string());
    }

    /// Canonical method names, sorted.
    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn resolve<'a>(&'a self, name: &'a str) -> &'a str {
        self.aliases.get(name).map(String::as_str).unwrap_or(name)
    }

    pub fn build(&self, spec: &GuidanceSpec) -> Result<Box<dyn Guidance>> {
        let name = self.resolve(&spec.method);
        let factory = self.factories.get(name).ok_or_else(|| Error::Unknown {
            kind: "guidance method",
            name: spec.method.clone(),
        })?;
        factory(spec)
    }
}

impl Default for GuidanceRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
