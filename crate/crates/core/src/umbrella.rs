//! Umbrella sampling as noisy inpainting of coordinate 0, plus WHAM
//! reweighting into a free-energy profile.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::gmm::GaussianMixture;
use crate::guidance::Guidance;
use crate::operators::{LinearOperator, Measurement};
use crate::rng::derive_seed2;
use crate::sampler::{map_indexed, Sampler};

pub const DEFAULT_WINDOWS: usize = 15;
pub const DEFAULT_CENTER_RANGE: (f64, f64) = (-3.5, 3.0);
pub const DEFAULT_SIGMA_Y: f64 = 0.35;
pub const DEFAULT_SAMPLES_PER_WINDOW: usize = 2000;
pub const DEFAULT_BINS: usize = 60;
pub const DEFAULT_BIN_RANGE: (f64, f64) = (-4.0, 3.5);
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Harmonic bias windows along coordinate 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub centers: Vec<f64>,
    pub sigma_y: f64,
    pub samples_per_window: usize,
}

impl WindowSet {
    pub fn new(centers: Vec<f64>, sigma_y: f64, samples_per_window: usize) -> Result<Self> {
        if centers.is_empty() {
            return Err(invalid("windows.centers", "at least one window is required"));
        }
        if centers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("windows.centers", "must be strictly increasing"));
        }
        if !(sigma_y > 0.0 && sigma_y.is_finite()) {
            return Err(invalid("windows.sigma_y", format!("{sigma_y} must be > 0")));
        }
        if samples_per_window == 0 {
            return Err(invalid("windows.samples_per_window", "must be >= 1"));
        }
        Ok(WindowSet {
            centers,
            sigma_y,
            samples_per_window,
        })
    }

    pub fn evenly_spaced(count: usize, lo: f64, hi: f64, sigma_y: f64, samples_per_window: usize) -> Result<Self> {
        let centers = match count {
            0 => Vec::new(),
            1 => vec![0.5 * (lo + hi)],
            _ => (0..count)
                .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
                .collect(),
        };
        Self::new(centers, sigma_y, samples_per_window)
    }

    pub fn default_set() -> Self {
        Self::evenly_spaced(
            DEFAULT_WINDOWS,
            DEFAULT_CENTER_RANGE.0,
            DEFAULT_CENTER_RANGE.1,
            DEFAULT_SIGMA_Y,
            DEFAULT_SAMPLES_PER_WINDOW,
        )
        .expect("default windows are valid")
    }

    /// `B_k(x) = (x − c_k)² / (2 σ_y²)`.
    pub fn bias(&self, k: usize, x: f64) -> f64 {
        let r = x - self.centers[k];
        r * r / (2.0 * self.sigma_y * self.sigma_y)
    }

    /// Inpainting measurement observing `c_k` on coordinate 0.
    pub fn measurement(&self, k: usize, dim: usize) -> Result<Measurement> {
        let mut y = vec![0.0; dim];
        let mut mask = vec![0.0; dim];
        y[0] = self.centers[k];
        mask[0] = 1.0;
        Measurement::new(y, LinearOperator::Mask(mask), self.sigma_y)
    }
}

pub fn uniform_edges(bins: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if bins == 0 || !(hi > lo) {
        return Err(invalid("bins", "need bins >= 1 and hi > lo"));
    }
    Ok((0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect())
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("bin_edges", "need at least two strictly increasing edges"));
    }
    Ok(())
}

/// Free energy per bin; `None` marks bins with no estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyProfile {
    pub bin_edges: Vec<f64>,
    pub f: Vec<Option<f64>>,
    pub coverage: Vec<usize>,
}

impl FreeEnergyProfile {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    fn from_neg_log(bin_edges: Vec<f64>, mut f: Vec<Option<f64>>, coverage: Vec<usize>) -> Self {
        let min = f.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        if min.is_finite() {
            for v in f.iter_mut().flatten() {
                *v -= min;
            }
        }
        FreeEnergyProfile { bin_edges, f, coverage }
    }

    /// RMSE against `reference` over bins where both are defined and this
    /// profile has at least `min_count` samples, after removing the best
    /// additive offset (profiles are only defined up to a constant).
    pub fn rmse_against(&self, reference: &FreeEnergyProfile, min_count: usize) -> Option<f64> {
        let pairs: Vec<(f64, f64)> = self
            .f
            .iter()
            .zip(&reference.f)
            .zip(&self.coverage)
            .filter_map(|((a, b), &n)| match (a, b) {
                (Some(a), Some(b)) if n >= min_count => Some((*a, *b)),
                _ => None,
            })
            .collect();
        if pairs.is_empty() {
            return None;
        }
        let n = pairs.len() as f64;
        let shift = pairs.iter().map(|(a, b)| b - a).sum::<f64>() / n;
        let mse = pairs.iter().map(|(a, b)| (a + shift - b).powi(2)).sum::<f64>() / n;
        Some(mse.sqrt())
    }
}

/// `F(x) = −log p(x^axis)` of the exact marginal at bin centers, min-shifted.
pub fn ground_truth_profile(gmm: &GaussianMixture, axis: usize, bin_edges: &[f64]) -> Result<FreeEnergyProfile> {
    check_edges(bin_edges)?;
    let marginal = gmm.marginal(axis)?;
    let none = crate::gmm::NoiseCov::none();
    let f = bin_edges
        .windows(2)
        .map(|w| {
            let c = 0.5 * (w[0] + w[1]);
            marginal.log_density_perturbed(&[c], &none).map(|l| Some(-l))
        })
        .collect::<Result<Vec<_>>>()?;
    let coverage = vec![0; f.len()];
    Ok(FreeEnergyProfile::from_neg_log(bin_edges.to_vec(), f, coverage))
}

/// Draws `samples_per_window` guided samples per window and returns their
/// coordinate-0 values, one vector per window. Sample `i` of window `k` uses
/// a seed derived from `(master_seed, k, i)`.
pub fn run_umbrella(
    gmm: &GaussianMixture,
    windows: &WindowSet,
    guidance: &dyn Guidance,
    sampler: &dyn Sampler,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<Vec<f64>>> {
    let d = gmm.dim();
    let measurements = (0..windows.centers.len())
        .map(|k| windows.measurement(k, d))
        .collect::<Result<Vec<_>>>()?;
    for m in &measurements {
        guidance.validate(Some(m), d)?;
    }
    let per = windows.samples_per_window;
    let flat = map_indexed(jobs, measurements.len() * per, |idx| {
        let (k, i) = (idx / per, idx % per);
        let seed = derive_seed2(master_seed, k as u64, i as u64);
        sampler
            .sample(gmm, guidance, Some(&measurements[k]), seed, false)
            .map(|tr| tr.final_x[0])
    })?;
    Ok(flat.chunks(per).map(<[f64]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhamResult {
    pub profile: FreeEnergyProfile,
    /// Window free energies, gauge-fixed so the first populated window is 0.
    pub window_f: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn log_sum_exp(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// WHAM on histograms of per-window samples, at unit temperature.
pub fn wham(
    samples: &[Vec<f64>],
    windows: &WindowSet,
    bin_edges: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<FreeEnergyProfile> {
    wham_detailed(samples, windows, bin_edges, tol, max_iter, None).map(|r| r.profile)
}

/// WHAM with an optional initial guess for the window free energies.
pub fn wham_detailed(
    samples: &[Vec<f64>],
    windows: &WindowSet,
    bin_edges: &[f64],
    tol: f64,
    max_iter: usize,
    f_init: Option<&[f64]>,
) -> Result<WhamResult> {
    let k_n = windows.centers.len();
    check_len("per-window samples", k_n, samples.len())?;
    check_edges(bin_edges)?;
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be > 0"));
    }
    let nb = bin_edges.len() - 1;
    let (lo, hi) = (bin_edges[0], bin_edges[nb]);

    let mut hist = vec![vec![0usize; nb]; k_n];
    for (k, xs) in samples.iter().enumerate() {
        for &x in xs {
            if !(x >= lo && x < hi) {
                continue;
            }
            let b = bin_edges.partition_point(|e| *e <= x) - 1;
            hist[k][b.min(nb - 1)] += 1;
        }
    }
    let n_k: Vec<usize> = hist.iter().map(|h| h.iter().sum()).collect();
    let counts: Vec<usize> = (0..nb).map(|b| hist.iter().map(|h| h[b]).sum()).collect();
    let active: Vec<usize> = (0..k_n).filter(|&k| n_k[k] > 0).collect();
    if active.is_empty() {
        return Err(invalid("samples", "no samples fall inside the bin range"));
    }

    let mut parent: Vec<usize> = (0..k_n).collect();
    for b in 0..nb {
        let mut owners = active.iter().filter(|&&k| hist[k][b] > 0);
        if let Some(&first) = owners.next() {
            for &k in owners {
                let (ra, rb) = (find(&mut parent, first), find(&mut parent, k));
                if ra != rb {
                    parent[rb] = ra;
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for &k in &active {
        let r = find(&mut parent, k);
        match roots.iter().position(|&x| x == r) {
            Some(i) => groups[i].push(k),
            None => {
                roots.push(r);
                groups.push(vec![k]);
            }
        }
    }
    if groups.len() > 1 {
        return Err(Error::DisconnectedWindows { groups });
    }

    let centers: Vec<f64> = bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let bias: Vec<Vec<f64>> = (0..k_n)
        .map(|k| centers.iter().map(|&x| windows.bias(k, x)).collect())
        .collect();
    let log_n: Vec<f64> = n_k.iter().map(|&n| (n as f64).ln()).collect();
    let covered: Vec<usize> = (0..nb).filter(|&b| counts[b] > 0).collect();
    let gauge = active[0];

    let mut f = vec![0.0; k_n];
    if let Some(init) = f_init {
        check_len("f_init", k_n, init.len())?;
        f.copy_from_slice(init);
    }
    let mut log_p = vec![f64::NEG_INFINITY; nb];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    let update_p = |f: &[f64], log_p: &mut [f64]| {
        for &b in &covered {
            let denom = log_sum_exp(active.iter().map(|&k| log_n[k] + f[k] - bias[k][b]));
            log_p[b] = (counts[b] as f64).ln() - denom;
        }
        let z = log_sum_exp(covered.iter().map(|&b| log_p[b]));
        for &b in &covered {
            log_p[b] -= z;
        }
    };
    let update_f = |log_p: &[f64], f: &mut [f64]| {
        for &k in &active {
            f[k] = -log_sum_exp(covered.iter().map(|&b| log_p[b] - bias[k][b]));
        }
        let g = f[gauge];
        for &k in &active {
            f[k] -= g;
        }
    };

    while iterations < max_iter {
        iterations += 1;
        update_p(&f, &mut log_p);
        let mut next = f.clone();
        update_f(&log_p, &mut next);
        residual = active.iter().map(|&k| (next[k] - f[k]).abs()).fold(0.0, f64::max);
        f = next;
        if residual < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(Error::NotConverged { iterations, residual });
    }
    update_p(&f, &mut log_p);

    let fe: Vec<Option<f64>> = (0..nb).map(|b| (counts[b] > 0).then(|| -log_p[b])).collect();
    Ok(WhamResult {
        profile: FreeEnergyProfile::from_neg_log(bin_edges.to_vec(), fe, counts),
        window_f: f,
        iterations,
        residual,
    })
}

/// Per-window coordinate-0 summary: (center, mean, std, n).
pub fn window_stats(samples: &[Vec<f64>], windows: &WindowSet) -> Vec<(f64, f64, f64, usize)> {
    samples
        .iter()
        .zip(&windows.centers)
        .map(|(xs, &c)| {
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
            let var = if n > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            (c, mean, var.sqrt(), n)
        })
        .collect()
}
