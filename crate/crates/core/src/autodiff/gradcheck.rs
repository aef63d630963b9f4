//! Central-difference oracle for analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `grad` against central differences of `f` at `probes` random
/// coordinates (with replacement only when `probes > n`); returns the worst probe.
pub fn finite_diff_check<F>(mut f: F, point: &[f64], grad: &[f64], probes: usize, eps: f64, seed: u64) -> Result<ProbeResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Invalid(format!("finite-difference step {eps} outside [1e-7, 1e-3]")));
    }
    if point.len() != grad.len() || point.is_empty() {
        return Err(Error::dim("finite_diff_check", point.len(), grad.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = if probes >= point.len() {
        (0..probes).map(|i| i % point.len()).collect()
    } else {
        rand::seq::index::sample(&mut rng, point.len(), probes).into_vec()
    };
    let mut x = point.to_vec();
    let mut worst = ProbeResult {
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
        rel_error: 0.0,
    };
    for i in indices {
        x[i] = point[i] + eps;
        let hi = f(&x)?;
        x[i] = point[i] - eps;
        let lo = f(&x)?;
        x[i] = point[i];
        if !(hi.is_finite() && lo.is_finite()) {
            return Err(Error::non_finite("diff_engine", format!("function value at probe {i}")));
        }
        let numeric = (hi - lo) / (2.0 * eps);
        let rel_error = relative_error(grad[i], numeric);
        if rel_error >= worst.rel_error {
            worst = ProbeResult {
                index: i,
                analytic: grad[i],
                numeric,
                rel_error,
            };
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1 - 2.0).collect();
        let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = finite_diff_check(|x| Ok(x.iter().map(|v| v * v).sum()), &x, &g, 30, 1e-5, 0).unwrap();
        assert!(r.rel_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn constant_has_zero_error() {
        let x = vec![1.0; 10];
        let r = finite_diff_check(|_| Ok(4.2), &x, &[0.0; 10], 10, 1e-6, 0).unwrap();
        assert_eq!(r.rel_error, 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = vec![1.0, 2.0];
        let r = finite_diff_check(|x| Ok(x[0] * x[1]), &x, &[2.0, 2.0], 2, 1e-6, 0).unwrap();
        assert!(r.rel_error > 0.4);
        assert_eq!(r.index, 1);
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(finite_diff_check(|_| Ok(0.0), &[1.0], &[0.0], 1, 1e-2, 0).is_err());
        assert!(finite_diff_check(|_| Ok(f64::NAN), &[1.0], &[0.0], 1, 1e-6, 0).is_err());
    }
}
