//! Diagonal-covariance Gaussian mixtures fitted by EM, always in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-8;
const EMPTY_MASS: f64 = 1e-12;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// One mixture over `dim`-dimensional vectors; means and variances are `K × dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmFitConfig {
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the mean per-sample NLL changes by less than this.
    pub tol: f64,
    pub seed: u64,
    pub variance_floor: f64,
}

impl Default for GmmFitConfig {
    fn default() -> Self {
        Self {
            components: 8,
            max_iters: 200,
            tol: 1e-7,
            seed: 0,
            variance_floor: VARIANCE_FLOOR,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub gmm: Gmm,
    /// Mean per-sample NLL of each iterate, starting with the initialisation.
    pub nll_trace: Vec<f64>,
    pub reseeded: usize,
}

impl Gmm {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    /// `log φ_k + log N(x | μ_k, σ²_k)` for every component.
    pub fn component_log_densities(&self, x: &[f64]) -> Vec<f64> {
        (0..self.components())
            .map(|k| {
                let (mu, var) = (self.mean(k), self.variance(k));
                let mut acc = 0.0;
                for i in 0..self.dim {
                    let d = x[i] - mu[i];
                    acc += LOG_2PI + var[i].ln() + d * d / var[i];
                }
                self.weights[k].ln() - 0.5 * acc
            })
            .collect()
    }

    /// Negative log density and its gradient with respect to `x`.
    pub fn nll_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let logs = self.component_log_densities(x);
        let lse = log_sum_exp(&logs);
        let mut grad = vec![0.0; self.dim];
        for (k, l) in logs.iter().enumerate() {
            let r = (l - lse).exp();
            if r == 0.0 {
                continue;
            }
            let (mu, var) = (self.mean(k), self.variance(k));
            for i in 0..self.dim {
                grad[i] += r * (x[i] - mu[i]) / var[i];
            }
        }
        (-lse, grad)
    }

    pub fn nll(&self, x: &[f64]) -> f64 {
        -log_sum_exp(&self.component_log_densities(x))
    }

    /// `Σ_i ½ log(2π σ²_ki)` minimised over components: no density value can go below it.
    pub fn nll_lower_bound(&self) -> f64 {
        (0..self.components())
            .map(|k| self.variance(k).iter().map(|v| 0.5 * (LOG_2PI + v.ln())).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self, floor: f64) -> Result<()> {
        let k = self.components();
        if k == 0 || self.means.len() != k * self.dim || self.variances.len() != k * self.dim {
            return Err(Error::Invalid("mixture shape mismatch".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Invalid(format!("mixture weights invalid (sum {total})")));
        }
        if self.variances.iter().any(|&v| !(v >= floor)) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invalid("mixture variances below floor or non-finite means".into()));
        }
        Ok(())
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn global_variance(samples: &[Vec<f64>], floor: f64) -> Vec<f64> {
    let (m, n) = (samples.len() as f64, samples[0].len());
    let mut mean = vec![0.0; n];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(a, x)| *a += x / m);
    }
    let mut var = vec![0.0; n];
    for s in samples {
        for i in 0..n {
            var[i] += (s[i] - mean[i]).powi(2) / m;
        }
    }
    var.iter().map(|v| v.max(floor)).collect()
}

/// k-means++ seeding followed by a few Lloyd sweeps; returns hard assignments.
fn kmeans_assign(samples: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = samples.len();
    let mut centers: Vec<Vec<f64>> = vec![samples[rng.random_range(0..m)].clone()];
    let mut d2: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centers.push(samples[pick].clone());
        let c = centers.last().unwrap();
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s, c));
        }
    }
    let nearest = |centers: &[Vec<f64>]| -> Vec<usize> {
        samples
            .par_iter()
            .map(|s| {
                let mut best = (f64::INFINITY, 0);
                for (j, c) in centers.iter().enumerate() {
                    let d = sq_dist(s, c);
                    if d < best.0 {
                        best = (d, j);
                    }
                }
                best.1
            })
            .collect()
    };
    let mut assign = nearest(&centers);
    for _ in 0..10 {
        let n = samples[0].len();
        let mut sums = vec![vec![0.0; n]; k];
        let mut counts = vec![0usize; k];
        for (s, &a) in samples.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(s).for_each(|(t, x)| *t += x);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|t| t / counts[j] as f64).collect();
            }
        }
        let next = nearest(&centers);
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

fn m_step(samples: &[Vec<f64>], resp: &[Vec<f64>], k: usize, floor: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (m, n) = (samples.len(), samples[0].len());
    let mut mass = vec![0.0; k];
    let mut means = vec![0.0; k * n];
    for (s, r) in samples.iter().zip(resp) {
        for j in 0..k {
            if r[j] == 0.0 {
                continue;
            }
            mass[j] += r[j];
            let row = &mut means[j * n..(j + 1) * n];
            row.iter_mut().zip(s).for_each(|(a, x)| *a += r[j] * x);
        }
    }
    for j in 0..k {
        if mass[j] > 0.0 {
            means[j * n..(j + 1) * n].iter_mut().for_each(|a| *a /= mass[j]);
        }
    }
    let mut vars = vec![0.0; k * n];
    for (s, r) in samples.iter().zip(resp) {
        for j in 0..k {
            if r[j] == 0.0 {
                continue;
            }
            for i in 0..n {
                let d = s[i] - means[j * n + i];
                vars[j * n + i] += r[j] * d * d;
            }
        }
    }
    for j in 0..k {
        for v in &mut vars[j * n..(j + 1) * n] {
            *v = if mass[j] > 0.0 { (*v / mass[j]).max(floor) } else { floor };
        }
    }
    let weights = mass.iter().map(|w| w / m as f64).collect();
    (weights, means, vars)
}

/// E-step: responsibilities, per-sample log-likelihoods.
fn e_step(gmm: &Gmm, samples: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    samples
        .par_iter()
        .map(|s| {
            let logs = gmm.component_log_densities(s);
            let lse = log_sum_exp(&logs);
            (logs.iter().map(|l| (l - lse).exp()).collect(), lse)
        })
        .unzip()
}

/// EM on `M` samples of equal length. `nll_trace` is non-increasing except
/// right after an empty component is re-seeded.
pub fn fit_gmm(samples: &[Vec<f64>], config: &GmmFitConfig) -> Result<GmmFit> {
    let k = config.components;
    let m = samples.len();
    if k == 0 {
        return Err(Error::Invalid("need at least one mixture component".into()));
    }
    if m < k {
        return Err(Error::Invalid(format!("{m} samples cannot fit {k} components")));
    }
    let n = samples[0].len();
    if n == 0 || samples.iter().any(|s| s.len() != n) {
        return Err(Error::Invalid("samples must share a nonzero dimension".into()));
    }
    if samples.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::non_finite("laplacian_prior", "EM samples"));
    }
    let floor = config.variance_floor;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let assign = if k == 1 { vec![0; m] } else { kmeans_assign(samples, k, &mut rng) };
    let hard: Vec<Vec<f64>> = assign
        .iter()
        .map(|&a| (0..k).map(|j| if j == a { 1.0 } else { 0.0 }).collect())
        .collect();
    let (weights, means, variances) = m_step(samples, &hard, k, floor);
    let mut gmm = Gmm {
        dim: n,
        weights,
        means,
        variances,
    };
    let global = global_variance(samples, floor);
    let mut reseeded = 0;
    let mut trace = Vec::new();
    reseed_empty(&mut gmm, samples, &global, &mut reseeded);
    for iter in 0..=config.max_iters {
        let (resp, ll) = e_step(&gmm, samples);
        let nll = -ll.iter().sum::<f64>() / m as f64;
        if !nll.is_finite() {
            return Err(Error::non_finite("laplacian_prior", "EM log-likelihood"));
        }
        trace.push(nll);
        if iter == config.max_iters || (iter > 0 && (trace[iter - 1] - nll).abs() < config.tol) {
            break;
        }
        let (w, mu, var) = m_step(samples, &resp, k, floor);
        gmm.weights = w;
        gmm.means = mu;
        gmm.variances = var;
        reseed_empty(&mut gmm, samples, &global, &mut reseeded);
    }
    Ok(GmmFit {
        gmm,
        nll_trace: trace,
        reseeded,
    })
}

/// Moves components with negligible mass onto the worst-explained sample.
fn reseed_empty(gmm: &mut Gmm, samples: &[Vec<f64>], global: &[f64], count: &mut usize) {
    let n = gmm.dim;
    for j in 0..gmm.components() {
        if gmm.weights[j] * samples.len() as f64 >= EMPTY_MASS {
            continue;
        }
        let worst = samples
            .iter()
            .enumerate()
            .map(|(i, s)| (gmm.nll(s), i))
            .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a })
            .1;
        gmm.means[j * n..(j + 1) * n].copy_from_slice(&samples[worst]);
        gmm.variances[j * n..(j + 1) * n].copy_from_slice(global);
        gmm.weights[j] = 1.0 / samples.len() as f64;
        let total: f64 = gmm.weights.iter().sum();
        gmm.weights.iter_mut().for_each(|w| *w /= total);
        *count += 1;
        log::warn!("mixture component {j} lost its support; re-seeded at sample {worst}");
    }
}
