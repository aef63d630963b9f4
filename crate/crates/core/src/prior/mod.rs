//! Per-axis Gaussian-mixture prior over mesh Laplacian coordinates.

pub mod gmm;
pub mod io;

pub use gmm::{fit_gmm, Gmm, GmmFit, GmmFitConfig, VARIANCE_FLOOR};
pub use io::{read_prior, write_prior};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::LaplacianOperator;
use crate::scalar::Real;

/// One mixture per coordinate axis, each over the `N`-vector `Δ_d = L V_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    pub axes: [Gmm; 3],
    pub variance_floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorFitReport {
    pub nll_traces: [Vec<f64>; 3],
    pub reseeded: usize,
}

impl GmmPrior {
    pub fn num_vertices(&self) -> usize {
        self.axes[0].dim
    }

    pub fn components(&self) -> usize {
        self.axes[0].components()
    }

    /// Smallest achievable NLL; see [`Gmm::nll_lower_bound`].
    pub fn nll_lower_bound(&self) -> f64 {
        self.axes.iter().map(Gmm::nll_lower_bound).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for g in &self.axes {
            g.validate(self.variance_floor)?;
            if g.dim != self.num_vertices() || g.components() != self.components() {
                return Err(Error::Invalid("prior axes disagree in shape".into()));
            }
        }
        Ok(())
    }
}

/// Splits Laplacian coordinates into the three per-axis `N`-vectors.
pub fn axis_columns(delta: &[[f64; 3]]) -> [Vec<f64>; 3] {
    [0, 1, 2].map(|d| delta.iter().map(|p| p[d]).collect())
}

pub fn fit_prior_from_meshes(
    laplacian: &LaplacianOperator<f64>,
    meshes: &[Vec<[f64; 3]>],
    config: &GmmFitConfig,
) -> Result<(GmmPrior, PriorFitReport)> {
    if meshes.len() < 100 {
        return Err(Error::Invalid(format!("need at least 100 posed meshes, got {}", meshes.len())));
    }
    let mut per_axis: [Vec<Vec<f64>>; 3] = Default::default();
    for v in meshes {
        let cols = axis_columns(&laplacian.apply(v)?);
        for (axis, col) in per_axis.iter_mut().zip(cols) {
            axis.push(col);
        }
    }
    let mut fits = Vec::with_capacity(3);
    for (d, samples) in per_axis.iter().enumerate() {
        let cfg = GmmFitConfig {
            seed: config.seed.wrapping_add(d as u64),
            ..*config
        };
        fits.push(fit_gmm(samples, &cfg)?);
    }
    let [x, y, z]: [GmmFit; 3] = fits.try_into().unwrap();
    let report = PriorFitReport {
        reseeded: x.reseeded + y.reseeded + z.reseeded,
        nll_traces: [x.nll_trace, y.nll_trace, z.nll_trace],
    };
    let prior = GmmPrior {
        axes: [x.gmm, y.gmm, z.gmm],
        variance_floor: config.variance_floor,
    };
    Ok((prior, report))
}

/// `Σ_d −log Σ_k φ_dk N(Δ_d | μ_dk, σ²_dk)` and its gradient.
///
/// Evaluated in `f64` whatever `T` is: with floored variances the quadratic
/// terms are far outside single-precision comfort.
pub fn prior_nll<T: Real>(prior: &GmmPrior, delta: &[[T; 3]]) -> Result<(T, Vec<[T; 3]>)> {
    if delta.len() != prior.num_vertices() {
        return Err(Error::dim("prior_nll delta", prior.num_vertices(), delta.len()));
    }
    let mut value = 0.0;
    let mut grad = vec![[T::zero(); 3]; delta.len()];
    for (d, gmm) in prior.axes.iter().enumerate() {
        let x: Vec<f64> = delta.iter().map(|p| p[d].f64()).collect();
        let (v, g) = gmm.nll_and_grad(&x);
        value += v;
        for (out, gi) in grad.iter_mut().zip(g) {
            out[d] = T::c(gi);
        }
    }
    if !value.is_finite() {
        return Err(Error::non_finite("laplacian_prior", "prior NLL"));
    }
    Ok((T::c(value), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{build_template, sample_poses};
    use crate::mesh::{build_mesh_graph, uniform_laplacian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_prior(n: usize, k: usize, rng: &mut ChaCha8Rng) -> GmmPrior {
        let axis = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
            let s: f64 = raw.iter().sum();
            Gmm {
                dim: n,
                weights: raw.iter().map(|w| w / s).collect(),
                means: (0..k * n).map(|_| rng.random::<f64>() - 0.5).collect(),
                variances: (0..k * n).map(|_| 0.05 + rng.random::<f64>()).collect(),
            }
        };
        GmmPrior {
            axes: [axis(rng), axis(rng), axis(rng)],
            variance_floor: VARIANCE_FLOOR,
        }
    }

    #[test]
    fn single_gaussian_mode_has_normaliser_value_and_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prior = random_prior(7, 1, &mut rng);
        let delta: Vec<[f64; 3]> = (0..7).map(|i| [0, 1, 2].map(|d| prior.axes[d].means[i])).collect();
        let (v, g) = prior_nll(&prior, &delta).unwrap();
        let expect: f64 = prior
            .axes
            .iter()
            .flat_map(|a| a.variances.iter())
            .map(|s| 0.5 * (2.0 * std::f64::consts::PI * s).ln())
            .sum();
        assert!((v - expect).abs() < 1e-12);
        assert!(g.iter().flatten().all(|x| *x == 0.0));

        let mut doubled = prior.clone();
        doubled.axes.iter_mut().for_each(|a| a.variances.iter_mut().for_each(|s| *s *= 2.0));
        let (v2, _) = prior_nll(&doubled, &delta).unwrap();
        assert!((v2 - v - 1.5 * 7.0 * 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 40;
        let prior = random_prior(n, 3, &mut rng);
        let delta: Vec<[f64; 3]> = (0..n).map(|_| [0, 1, 2].map(|_| rng.random::<f64>() - 0.5)).collect();
        let (_, g) = prior_nll(&prior, &delta).unwrap();
        for _ in 0..100 {
            let (i, d) = (rng.random_range(0..n), rng.random_range(0..3));
            let (mut hi, mut lo) = (delta.clone(), delta.clone());
            hi[i][d] += 1e-6;
            lo[i][d] -= 1e-6;
            let num = (prior_nll(&prior, &hi).unwrap().0 - prior_nll(&prior, &lo).unwrap().0) / 2e-6;
            let err = (num - g[i][d]).abs() / num.abs().max(g[i][d].abs()).max(1e-8);
            assert!(err <= 1e-6, "{err}");
        }
    }

    #[test]
    fn axis_order_is_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prior = random_prior(9, 2, &mut rng);
        let delta: Vec<[f64; 3]> = (0..9).map(|_| [0, 1, 2].map(|_| rng.random::<f64>())).collect();
        let perm = [2, 0, 1];
        let swapped = GmmPrior {
            axes: perm.map(|d| prior.axes[d].clone()),
            variance_floor: VARIANCE_FLOOR,
        };
        let swapped_delta: Vec<[f64; 3]> = delta.iter().map(|p| perm.map(|d| p[d])).collect();
        let a = prior_nll(&prior, &delta).unwrap().0;
        let b = prior_nll(&swapped, &swapped_delta).unwrap().0;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn translated_rest_meshes_collapse_to_the_floor() {
        let t = build_template(0).unwrap();
        let graph = build_mesh_graph(&t.mesh).unwrap();
        let (lap, rest_delta) = uniform_laplacian(&graph, &t.mesh.vertices).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let meshes: Vec<Vec<[f64; 3]>> = (0..100)
            .map(|_| {
                let s = [0, 1, 2].map(|_| rng.random::<f64>() * 4.0 - 2.0);
                t.mesh.vertices.iter().map(|v| [v[0] + s[0], v[1] + s[1], v[2] + s[2]]).collect()
            })
            .collect();
        let cfg = GmmFitConfig {
            components: 2,
            ..GmmFitConfig::default()
        };
        let (prior, _) = fit_prior_from_meshes(&lap, &meshes, &cfg).unwrap();
        prior.validate().unwrap();
        for (d, axis) in prior.axes.iter().enumerate() {
            assert!(axis.variances.iter().all(|&v| v == VARIANCE_FLOOR));
            for k in 0..2 {
                for (m, r) in axis.mean(k).iter().zip(&rest_delta) {
                    assert!((m - r[d]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nll_respects_the_lower_bound() {
        let t = build_template(0).unwrap();
        let graph = build_mesh_graph(&t.mesh).unwrap();
        let (lap, _) = uniform_laplacian(&graph, &t.mesh.vertices).unwrap();
        let meshes: Vec<Vec<[f64; 3]>> = sample_poses(&t, 150, 4).unwrap().into_iter().map(|p| p.vertices).collect();
        let cfg = GmmFitConfig {
            components: 4,
            ..GmmFitConfig::default()
        };
        let (prior, report) = fit_prior_from_meshes(&lap, &meshes, &cfg).unwrap();
        prior.validate().unwrap();
        for trace in &report.nll_traces {
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9);
            }
        }
        let lb = prior.nll_lower_bound();
        for v in meshes.iter().take(20) {
            let (nll, _) = prior_nll(&prior, &lap.apply(v).unwrap()).unwrap();
            assert!(nll >= lb);
        }
        assert!(fit_prior_from_meshes(&lap, &meshes[..50], &cfg).is_err());
    }
}
