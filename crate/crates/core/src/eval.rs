//! Mesh and segmentation metrics.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::TrainingSample;
use crate::error::{Error, Result};
use crate::net::{forward_network, BodyModel, NetworkParams};
use crate::render::{render_soft_parts, SoftRenderConfig};
use crate::scalar::Real;
use crate::tensor::Tensor;

fn check_pair(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::dim("mesh metric vertices", gt.len(), pred.len()));
    }
    Ok(())
}

fn mean_distance_mm(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt())
        .sum();
    1000.0 * s / pred.len() as f64
}

fn centered(points: &[[f64; 3]], root_weights: &[f64]) -> Vec<[f64; 3]> {
    let root = [0, 1, 2].map(|d| points.iter().zip(root_weights).map(|(p, w)| p[d] * w).sum::<f64>());
    points.iter().map(|p| [p[0] - root[0], p[1] - root[1], p[2] - root[2]]).collect()
}

/// Mean per-vertex error in millimetres after root-centring both meshes
/// with `root_weights` (the regressor's root row).
pub fn mpve(pred: &[[f64; 3]], gt: &[[f64; 3]], root_weights: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    if root_weights.len() != pred.len() {
        return Err(Error::dim("mpve root weights", pred.len(), root_weights.len()));
    }
    Ok(mean_distance_mm(&centered(pred, root_weights), &centered(gt, root_weights)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let q = self.scale * (self.rotation * Vector3::from(*p)) + self.translation;
        [q.x, q.y, q.z]
    }
}

/// Least-squares similarity taking `pred` onto `gt` (Umeyama); `None` when
/// either point set has no spread.
pub fn similarity_align(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Option<Similarity> {
    let n = pred.len() as f64;
    let mean = |ps: &[[f64; 3]]| ps.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let (mp, mg) = (mean(pred), mean(gt));
    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (dp, dg) = (Vector3::from(*p) - mp, Vector3::from(*g) - mg);
        cov += dg * dp.transpose();
        var_p += dp.norm_squared();
        var_g += dg.norm_squared();
    }
    let tiny = 1e-20 * n;
    if var_p <= tiny || var_g <= tiny {
        return None;
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = (svd.singular_values.component_mul(&d.diagonal())).sum() / var_p;
    let translation = mg - scale * (rotation * mp);
    Some(Similarity {
        scale,
        rotation,
        translation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcrustesResult {
    pub error_mm: f64,
    /// True when alignment was impossible and the plain mPVE was returned.
    pub degenerate: bool,
}

/// Mean per-vertex error after optimal similarity alignment.
pub fn procrustes_error(pred: &[[f64; 3]], gt: &[[f64; 3]], root_weights: &[f64]) -> Result<ProcrustesResult> {
    check_pair(pred, gt)?;
    match similarity_align(pred, gt) {
        Some(sim) => {
            let aligned: Vec<[f64; 3]> = pred.iter().map(|p| sim.apply(p)).collect();
            Ok(ProcrustesResult {
                error_mm: mean_distance_mm(&aligned, gt),
                degenerate: false,
            })
        }
        None => Ok(ProcrustesResult {
            error_mm: mpve(pred, gt, root_weights)?,
            degenerate: true,
        }),
    }
}

/// Per-pixel labels: `Some(part)` or `None` for background.
fn harden<T: Real>(masks: &Tensor<T>, threshold: f64) -> Vec<Option<usize>> {
    let z = masks.shape()[2];
    masks
        .data()
        .chunks_exact(z)
        .map(|px| {
            let (best, val) = px
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, (i, v)| if v.f64() > a.1 { (i, v.f64()) } else { a });
            (val >= threshold).then_some(best)
        })
        .collect()
}

/// `(accuracy, mean F1)` over the `Z` parts plus background. Soft
/// predictions are hardened by argmax, with background when every part
/// scores below 0.5. Classes absent from both maps are left out of the F1 mean.
pub fn segmentation_scores<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<(f64, f64)> {
    if pred.shape() != gt.shape() || pred.shape().len() != 3 {
        return Err(Error::dim("segmentation masks", format!("{:?}", gt.shape()), format!("{:?}", pred.shape())));
    }
    let z = pred.shape()[2];
    let (p, g) = (harden(pred, 0.5), harden(gt, 0.5));
    let class = |l: Option<usize>| l.map_or(z, |c| c);
    let mut tp = vec![0usize; z + 1];
    let mut fp = vec![0usize; z + 1];
    let mut fn_ = vec![0usize; z + 1];
    let mut correct = 0;
    for (a, b) in p.iter().zip(&g) {
        let (a, b) = (class(*a), class(*b));
        if a == b {
            tp[a] += 1;
            correct += 1;
        } else {
            fp[a] += 1;
            fn_[b] += 1;
        }
    }
    let f1: Vec<f64> = (0..=z)
        .filter(|&c| tp[c] + fp[c] + fn_[c] > 0)
        .map(|c| 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fn_[c]) as f64)
        .collect();
    let mean_f1 = f1.iter().sum::<f64>() / f1.len() as f64;
    Ok((correct as f64 / p.len() as f64, mean_f1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpve_mm: f64,
    pub reconst_error_mm: f64,
    pub seg_accuracy: f64,
    pub seg_f1: f64,
    pub sample_count: usize,
}

/// Per-sample `(mpve, procrustes, accuracy, f1)`, averaged.
pub fn summarize(rows: &[[f64; 4]]) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(Error::Invalid("no samples to evaluate".into()));
    }
    let n = rows.len() as f64;
    let mean = |i: usize| rows.iter().map(|r| r[i]).sum::<f64>() / n;
    let report = EvalReport {
        mpve_mm: mean(0),
        reconst_error_mm: mean(1),
        seg_accuracy: mean(2),
        seg_f1: mean(3),
        sample_count: rows.len(),
    };
    if ![report.mpve_mm, report.reconst_error_mm, report.seg_accuracy, report.seg_f1]
        .iter()
        .all(|x| x.is_finite())
    {
        return Err(Error::non_finite("eval_metrics", "report"));
    }
    Ok(report)
}

/// Scores one prediction against a sample (reads the evaluation-only mesh).
pub fn score_prediction<T: Real>(
    vertices: &[[T; 3]],
    pred_masks: &Tensor<T>,
    sample: &TrainingSample<T>,
    root_weights: &[f64],
) -> Result<[f64; 4]> {
    let pred: Vec<[f64; 3]> = vertices.iter().map(|p| p.map(|x| x.f64())).collect();
    let gt: Vec<[f64; 3]> = sample.gt_mesh.reveal().iter().map(|p| p.map(|x| x.f64())).collect();
    let (acc, f1) = segmentation_scores(pred_masks, &sample.gt_part_masks)?;
    Ok([
        mpve(&pred, &gt, root_weights)?,
        procrustes_error(&pred, &gt, root_weights)?.error_mm,
        acc,
        f1,
    ])
}

/// Runs the network on every sample and averages the metrics.
pub fn evaluate<T: Real>(
    params: &NetworkParams<T>,
    model: &BodyModel<T>,
    samples: &[TrainingSample<T>],
    render: &SoftRenderConfig,
) -> Result<EvalReport> {
    let root: Vec<f64> = model.root_weights.iter().map(|w| w.f64()).collect();
    let rows = samples
        .par_iter()
        .map(|s| {
            let out = forward_network(params, model, &s.input_channels)?;
            let verts = out.vertices();
            let masks = render_soft_parts(&verts, &model.faces, &model.part_of_face, model.num_parts, &out.camera(), render)?;
            score_prediction(&verts, &masks, s, &root)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(&rows)
}
