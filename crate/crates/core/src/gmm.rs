//! Diagonal-covariance Gaussian mixtures with closed-form perturbed
//! log-density, score and Hessian.
//!
//! A mixture convolved with Gaussian noise `N(0, Σ_noise)` is again a mixture
//! with component covariances `diag(v_i) + Σ_noise`, so every noise-perturbed
//! quantity the samplers need is exact. This is the stand-in for a trained
//! score network.

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, invalid, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One weighted diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance (variances, not standard deviations).
    pub var: Vec<f64>,
}

/// Covariance of the Gaussian noise a mixture is convolved with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCov {
    Isotropic(f64),
    /// Per-coordinate variances. Zero entries leave that coordinate unnoised.
    Diagonal(Vec<f64>),
}

impl NoiseCov {
    pub fn none() -> Self {
        NoiseCov::Isotropic(0.0)
    }

    #[inline]
    pub fn at(&self, j: usize) -> f64 {
        match self {
            NoiseCov::Isotropic(s2) => *s2,
            NoiseCov::Diagonal(v) => v[j],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            NoiseCov::Isotropic(s2) => {
                if !s2.is_finite() || *s2 < 0.0 {
                    return Err(invalid("noise", format!("isotropic variance {s2} must be >= 0")));
                }
            }
            NoiseCov::Diagonal(v) => {
                check_len("noise covariance", dim, v.len())?;
                if v.iter().any(|e| !e.is_finite() || *e < 0.0) {
                    return Err(invalid("noise", "diagonal variances must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Dense diagonal, for callers that need the entries explicitly.
    pub fn to_diagonal(&self, dim: usize) -> Vec<f64> {
        (0..dim).map(|j| self.at(j)).collect()
    }
}

/// Weighted mixture of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureFile", into = "MixtureFile")]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

/// On-disk mixture definition: `{"dim": 2, "components": [{"weight", "mean", "var"}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureFile {
    pub dim: usize,
    pub components: Vec<Component>,
}

impl TryFrom<MixtureFile> for GaussianMixture {
    type Error = Error;

    fn try_from(f: MixtureFile) -> Result<Self> {
        let gmm = GaussianMixture::new(f.components)?;
        check_len("mixture dim", f.dim, gmm.dim)?;
        Ok(gmm)
    }
}

impl From<GaussianMixture> for MixtureFile {
    fn from(g: GaussianMixture) -> Self {
        MixtureFile {
            dim: g.dim,
            components: g.components,
        }
    }
}

/// Names accepted by [`GaussianMixture::preset`].
pub const PRESETS: &[&str] = &["doublewell2d", "gauss1d", "mixture1d"];

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("components", "mixture needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        let mut total = 0.0;
        for c in &components {
            check_len("component mean", dim, c.mean.len())?;
            check_len("component var", dim, c.var.len())?;
            check_finite("component mean", &c.mean)?;
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(invalid("weight", format!("{} must be > 0", c.weight)));
            }
            if c.var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(invalid("var", "component variances must be > 0"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weight", format!("weights sum to {total}, expected 1")));
        }
        Ok(GaussianMixture { dim, components })
    }

    /// Equal-weight mixture from `(mean, std)` pairs.
    pub fn equal_weights(parts: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let w = 1.0 / parts.len() as f64;
        let comps = parts
            .iter()
            .map(|(m, s)| Component {
                weight: w,
                mean: m.clone(),
                var: s.iter().map(|s| s * s).collect(),
            })
            .collect();
        Self::new(comps)
    }

    /// Single isotropic Gaussian `N(mean, var·I)`.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![Component {
            weight: 1.0,
            mean,
            var: vec![var; d],
        }])
    }

    /// The two-dimensional double well: equal weights, means (-2.0, 2.4) and
    /// (1.5, 0.0), standard deviations (0.5, 0.6) and (0.3, 0.45).
    pub fn double_well() -> Self {
        Self::equal_weights(&[(vec![-2.0, 2.4], vec![0.5, 0.6]), (vec![1.5, 0.0], vec![0.3, 0.45])])
            .expect("preset is valid")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "doublewell2d" => Ok(Self::double_well()),
            "gauss1d" => Self::isotropic(vec![0.0], 1.0),
            "mixture1d" => Self::new(vec![
                Component {
                    weight: 0.3,
                    mean: vec![-1.5],
                    var: vec![0.25],
                },
                Component {
                    weight: 0.7,
                    mean: vec![1.0],
                    var: vec![0.5],
                },
            ]),
            other => Err(Error::Unknown {
                kind: "preset",
                name: other.to_string(),
            }),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (mj, cj) in m.iter_mut().zip(&c.mean) {
                *mj += c.weight * cj;
            }
        }
        m
    }

    /// Per-coordinate variance of the mixture.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        (0..self.dim)
            .map(|j| {
                self.components
                    .iter()
                    .map(|c| c.weight * (c.var[j] + (c.mean[j] - m[j]).powi(2)))
                    .sum()
            })
            .collect()
    }

    /// The mixture convolved with `noise`: same weights, variances `v_i + Σ`.
    pub fn convolved(&self, noise: &NoiseCov) -> Result<Self> {
        noise.validate(self.dim)?;
        let components = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: c.mean.clone(),
                var: c.var.iter().enumerate().map(|(j, v)| v + noise.at(j)).collect(),
            })
            .collect();
        Ok(GaussianMixture {
            dim: self.dim,
            components,
        })
    }

    /// Distribution of `c·x` for `x` drawn from the mixture.
    pub fn scaled(&self, c: f64) -> Self {
        let components = self
            .components
            .iter()
            .map(|k| Component {
                weight: k.weight,
                mean: k.mean.iter().map(|m| c * m).collect(),
                var: k.var.iter().map(|v| c * c * v).collect(),
            })
            .collect();
        GaussianMixture {
            dim: self.dim,
            components,
        }
    }

    /// One-dimensional marginal along `axis`.
    pub fn marginal(&self, axis: usize) -> Result<Self> {
        if axis >= self.dim {
            return Err(invalid("axis", format!("{axis} >= dim {}", self.dim)));
        }
        let components = self
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: vec![c.mean[axis]],
                var: vec![c.var[axis]],
            })
            .collect();
        Ok(GaussianMixture { dim: 1, components })
    }

    fn check_query(&self, x: &[f64], noise: &NoiseCov) -> Result<()> {
        check_len("query point", self.dim, x.len())?;
        check_finite("query point", x)?;
        noise.validate(self.dim)
    }

    /// Log of `Σ_i w_i N(x; μ_i, v_i + noise_j)` per component, unnormalized
    /// over components.
    fn component_logs(&self, x: &[f64], noise: &NoiseCov, out: &mut Vec<f64>) {
        out.clear();
        for c in &self.components {
            let mut l = c.weight.ln();
            for j in 0..self.dim {
                let s = c.var[j] + noise.at(j);
                let d = x[j] - c.mean[j];
                l -= 0.5 * (LN_2PI + s.ln() + d * d / s);
            }
            out.push(l);
        }
    }

    /// Turns component logs into responsibilities in place; returns the
    /// log-sum-exp.
    fn normalize(logs: &mut [f64]) -> f64 {
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for l in logs.iter_mut() {
            *l = (*l - m).exp();
            z += *l;
        }
        for l in logs.iter_mut() {
            *l /= z;
        }
        m + z.ln()
    }

    /// `log p_Σ(x)` for the mixture convolved with `noise`.
    pub fn log_density_perturbed(&self, x: &[f64], noise: &NoiseCov) -> Result<f64> {
        self.check_query(x, noise)?;
        let mut logs = Vec::with_capacity(self.components.len());
        self.component_logs(x, noise, &mut logs);
        Ok(Self::normalize(&mut logs))
    }

    /// `∇_x log p_Σ(x) = Σ_i γ_i(x) Λ_i (μ_i − x)`.
    pub fn score_perturbed(&self, x: &[f64], noise: &NoiseCov) -> Result<Vec<f64>> {
        self.check_query(x, noise)?;
        let mut resp = Vec::with_capacity(self.components.len());
        self.component_logs(x, noise, &mut resp);
        Self::normalize(&mut resp);
        let mut g = vec![0.0; self.dim];
        for (c, r) in self.components.iter().zip(&resp) {
            for j in 0..self.dim {
                g[j] += r * (c.mean[j] - x[j]) / (c.var[j] + noise.at(j));
            }
        }
        Ok(g)
    }

    /// `∇²_x log p_Σ(x) = Σ_i γ_i (g_i g_iᵀ − Λ_i) − g gᵀ`.
    pub fn hessian_perturbed(&self, x: &[f64], noise: &NoiseCov) -> Result<DMatrix<f64>> {
        self.check_query(x, noise)?;
        let d = self.dim;
        let mut resp = Vec::with_capacity(self.components.len());
        self.component_logs(x, noise, &mut resp);
        Self::normalize(&mut resp);

        let mut h = DMatrix::zeros(d, d);
        let mut g = vec![0.0; d];
        let mut gi = vec![0.0; d];
        for (c, r) in self.components.iter().zip(&resp) {
            for j in 0..d {
                let s = c.var[j] + noise.at(j);
                gi[j] = (c.mean[j] - x[j]) / s;
                g[j] += r * gi[j];
                h[(j, j)] -= r / s;
            }
            for a in 0..d {
                for b in 0..d {
                    h[(a, b)] += r * gi[a] * gi[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                h[(a, b)] -= g[a] * g[b];
            }
        }
        Ok(h)
    }

    /// One ancestral draw: component by weight, then a diagonal Gaussian.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let idx = if self.components.len() == 1 {
            0
        } else {
            let w = WeightedIndex::new(self.components.iter().map(|c| c.weight))
                .expect("weights validated at construction");
            w.sample(rng)
        };
        let c = &self.components[idx];
        c.mean
            .iter()
            .zip(&c.var)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }

    /// `n` prior draws, deterministic in `seed`.
    pub fn sample_prior(&self, seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_with(&mut rng)).collect()
    }
}
