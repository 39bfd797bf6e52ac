#![allow(dead_code)]

//! Brute-force oracles shared by the integration and acceptance tests. They
//! only use the mixture parameters, never the library's score code.

use dpsw_core::gmm::GaussianMixture;

/// Rectangle grid used for tensor-product trapezoid rules.
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let h = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                let w = if i == 0 || i == self.n - 1 { 0.5 * h } else { h };
                (self.lo + h * i as f64, w)
            })
            .collect()
    }
}

/// Log prior density of a diagonal mixture from its parameters.
pub fn log_prior(gmm: &GaussianMixture, x: &[f64]) -> f64 {
    let terms: Vec<f64> = gmm
        .components()
        .iter()
        .map(|c| {
            let mut l = c.weight.ln();
            for j in 0..x.len() {
                let v = c.var[j];
                l += -0.5 * (x[j] - c.mean[j]).powi(2) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln();
            }
            l
        })
        .collect();
    lse(&terms)
}

pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log ∫ exp(f(x0)) dx0` over a 2D grid, accumulated in log space.
pub fn log_integrate_2d(grid: &Grid, f: impl Fn(&[f64; 2]) -> f64) -> f64 {
    let nodes = grid.nodes();
    let mut terms = Vec::with_capacity(nodes.len() * nodes.len());
    for &(a, wa) in &nodes {
        for &(b, wb) in &nodes {
            terms.push(f(&[a, b]) + (wa * wb).ln());
        }
    }
    lse(&terms)
}

pub fn log_integrate_1d(grid: &Grid, f: impl Fn(f64) -> f64) -> f64 {
    let terms: Vec<f64> = grid.nodes().iter().map(|&(a, w)| f(a) + w.ln()).collect();
    lse(&terms)
}

pub fn log_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * (x - m).powi(2) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
}

/// Tabulated `log p(x0) + log(weights)` on a 2D grid, reused across queries.
pub struct PosteriorQuadrature {
    points: Vec<[f64; 2]>,
    base: Vec<f64>,
}

impl PosteriorQuadrature {
    pub fn new(gmm: &GaussianMixture, grid: &Grid) -> Self {
        let nodes = grid.nodes();
        let mut points = Vec::with_capacity(nodes.len() * nodes.len());
        let mut base = Vec::with_capacity(nodes.len() * nodes.len());
        for &(a, wa) in &nodes {
            for &(b, wb) in &nodes {
                points.push([a, b]);
                base.push(log_prior(gmm, &[a, b]) + (wa * wb).ln());
            }
        }
        PosteriorQuadrature { points, base }
    }

    /// Unnormalized `log p_t(x_t | y)` for a diagonal operator `a` (zero
    /// entries drop the likelihood on that coordinate), up to a constant
    /// independent of `x_t`.
    pub fn log_posterior(&self, x_t: &[f64], y: &[f64], a: &[f64], sigma_y: f64, sigma_t: f64) -> f64 {
        let (sy2, st2) = (sigma_y * sigma_y, sigma_t * sigma_t);
        let terms: Vec<f64> = self
            .points
            .iter()
            .zip(&self.base)
            .map(|(x0, b)| {
                let mut l = *b;
                for j in 0..2 {
                    if a[j] != 0.0 {
                        l -= 0.5 * (y[j] - a[j] * x0[j]).powi(2) / sy2;
                    }
                    l -= 0.5 * (x_t[j] - x0[j]).powi(2) / st2;
                }
                l
            })
            .collect();
        lse(&terms)
    }

    /// `log ∫ p(x0) N(x; x0, σ² I) dx0` up to the Gaussian normalizer.
    pub fn log_perturbed(&self, x: &[f64], sigma: f64) -> f64 {
        self.log_posterior(x, &[0.0, 0.0], &[0.0, 0.0], 1.0, sigma)
    }
}

/// Central finite-difference gradient.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[j] += h;
            m[j] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Fourth-order central difference gradient.
pub fn fd_grad4(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let at = |k: f64| {
                let mut p = x.to_vec();
                p[j] += k * h;
                f(&p)
            };
            (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
        })
        .collect()
}

/// Mean and variance of `p(x⁰) N(c; x⁰, σ_y²)` on coordinate 0 by 1D quadrature.
pub fn biased_marginal_moments(gmm: &GaussianMixture, c: f64, sigma_y: f64) -> (f64, f64) {
    let m = gmm.marginal(0).unwrap();
    let grid = Grid {
        lo: -10.0,
        hi: 10.0,
        n: 20001,
    };
    let logf = |x: f64| log_prior(&m, &[x]) + log_normal(c, x, sigma_y * sigma_y);
    let z = log_integrate_1d(&grid, logf);
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (x, w) in grid.nodes() {
        let p = (logf(x) - z).exp() * w;
        m1 += p * x;
        m2 += p * x * x;
    }
    (m1, m2 - m1 * m1)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Deterministic pseudo-random points for sweeps (splitmix-style, no rng crate).
pub struct Sweep(pub u64);

impl Sweep {
    pub fn next_unit(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }
}
