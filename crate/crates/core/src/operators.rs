//! Diagonal linear measurement operators and the noisy forward model
//! `y = A x₀ + σ_y η`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, invalid, Error, Result};

/// Structured diagonal operator; never materialized as a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    Identity,
    /// 0/1 entries; 1 marks an observed coordinate.
    Mask(Vec<f64>),
    /// Invertible diagonal, all entries nonzero.
    Diagonal(Vec<f64>),
}

impl LinearOperator {
    pub fn mask(m: Vec<f64>) -> Result<Self> {
        if m.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(invalid("mask", "entries must be 0 or 1"));
        }
        Ok(LinearOperator::Mask(m))
    }

    pub fn diagonal(d: Vec<f64>) -> Result<Self> {
        check_finite("diagonal operator", &d)?;
        if d.contains(&0.0) {
            return Err(invalid("diagonal", "entries must be nonzero"));
        }
        Ok(LinearOperator::Diagonal(d))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LinearOperator::Identity => "identity",
            LinearOperator::Mask(_) => "mask",
            LinearOperator::Diagonal(_) => "diagonal",
        }
    }

    /// Checks the operator against the signal dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            LinearOperator::Identity => Ok(()),
            LinearOperator::Mask(m) | LinearOperator::Diagonal(m) => check_len("operator", dim, m.len()),
        }
    }

    #[inline]
    pub fn entry(&self, j: usize) -> f64 {
        match self {
            LinearOperator::Identity => 1.0,
            LinearOperator::Mask(m) | LinearOperator::Diagonal(m) => m[j],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, v)| self.entry(j) * v).collect()
    }

    /// Diagonal operators are self-adjoint.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x)
    }

    /// Number of observed coordinates (`d` for identity and diagonal).
    pub fn observed(&self, dim: usize) -> usize {
        match self {
            LinearOperator::Mask(m) => m.iter().filter(|v| **v == 1.0).count(),
            _ => dim,
        }
    }
}

/// Config form: `{"kind": "identity"|"mask"|"diagonal", "values": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub kind: String,
    #[serde(default)]
    pub values: Vec<f64>,
}

impl OperatorSpec {
    pub fn build(&self) -> Result<LinearOperator> {
        match self.kind.as_str() {
            "identity" => Ok(LinearOperator::Identity),
            "mask" => LinearOperator::mask(self.values.clone()),
            "diagonal" => LinearOperator::diagonal(self.values.clone()),
            other => Err(Error::Unknown {
                kind: "operator",
                name: other.to_string(),
            }),
        }
    }
}

impl From<&LinearOperator> for OperatorSpec {
    fn from(op: &LinearOperator) -> Self {
        let values = match op {
            LinearOperator::Identity => Vec::new(),
            LinearOperator::Mask(v) | LinearOperator::Diagonal(v) => v.clone(),
        };
        OperatorSpec {
            kind: op.kind().to_string(),
            values,
        }
    }
}

/// An observation `y` of a signal through `op` with noise level `sigma_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: Vec<f64>,
    pub op: LinearOperator,
    pub sigma_y: f64,
}

impl Measurement {
    /// Validates dimensions and the zero-at-masked-coordinates convention.
    pub fn new(y: Vec<f64>, op: LinearOperator, sigma_y: f64) -> Result<Self> {
        if !(sigma_y >= 0.0 && sigma_y.is_finite()) {
            return Err(invalid("sigma_y", format!("{sigma_y} must be >= 0")));
        }
        check_finite("measurement", &y)?;
        op.validate(y.len())?;
        if let LinearOperator::Mask(m) = &op {
            if m.iter().zip(&y).any(|(mi, yi)| *mi == 0.0 && *yi != 0.0) {
                return Err(invalid("y", "masked coordinates must be exactly 0"));
            }
        }
        Ok(Measurement { y, op, sigma_y })
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// `y − A x`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        self.y.iter().zip(self.op.apply(x)).map(|(y, ax)| y - ax).collect()
    }
}

/// Draws `y = A x₀ + σ_y η`. For masks the noise only touches observed
/// coordinates and masked entries stay exactly zero.
pub fn forward_model(x0: &[f64], op: &LinearOperator, sigma_y: f64, seed: u64) -> Result<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    forward_model_with(x0, op, sigma_y, &mut rng)
}

pub fn forward_model_with<R: Rng + ?Sized>(
    x0: &[f64],
    op: &LinearOperator,
    sigma_y: f64,
    rng: &mut R,
) -> Result<Measurement> {
    op.validate(x0.len())?;
    if !(sigma_y >= 0.0 && sigma_y.is_finite()) {
        return Err(invalid("sigma_y", format!("{sigma_y} must be >= 0")));
    }
    let mut y = op.apply(x0);
    for (j, yj) in y.iter_mut().enumerate() {
        let z: f64 = rng.sample(StandardNormal);
        let observed = !matches!(op, LinearOperator::Mask(m) if m[j] == 0.0);
        if observed {
            *yj += sigma_y * z;
        }
    }
    Measurement::new(y, op.clone(), sigma_y)
}
