//! Ground-truth rendering and dataset sampling.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pose::{pose_mesh, PosedBody};
use super::skeleton::NUM_JOINTS;
use super::template::BodyTemplate;
use crate::error::{Error, Result};
use crate::render::{pixel_center, project_weak_perspective, to_pixel, CameraParams};
use crate::scalar::{cast_points, Real};
use crate::tensor::Tensor;

/// Wrapper for data that training code must never read.
///
/// Every [`EvalOnly::reveal`] is counted so tests can assert that the loss and
/// training paths leave it untouched.
#[derive(Debug)]
pub struct EvalOnly<V> {
    value: V,
    reads: AtomicUsize,
}

impl<V> EvalOnly<V> {
    pub fn new(value: V) -> Self {
        Self {
            value,
            reads: AtomicUsize::new(0),
        }
    }

    pub fn reveal(&self) -> &V {
        self.reads.fetch_add(1, Ordering::SeqCst);
        &self.value
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

impl<V: Clone> Clone for EvalOnly<V> {
    fn clone(&self) -> Self {
        Self {
            value: self.value.clone(),
            reads: AtomicUsize::new(self.reads()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSample<T> {
    /// `H × W × (K + Z)`: joint heatmaps then part masks.
    pub input_channels: Tensor<T>,
    /// Normalized image coordinates in `[-1, 1]`.
    pub gt_joints_2d: Vec<[T; 2]>,
    /// Root-relative, meters.
    pub gt_joints_3d: Vec<[T; 3]>,
    /// `H × W × Z` hard labels.
    pub gt_part_masks: Tensor<T>,
    pub gt_mesh: EvalOnly<Vec<[T; 3]>>,
    pub camera_gt: CameraParams<T>,
}

impl<T: Real> TrainingSample<T> {
    pub fn cast<U: Real>(&self) -> TrainingSample<U> {
        TrainingSample {
            input_channels: self.input_channels.cast(),
            gt_joints_2d: self
                .gt_joints_2d
                .iter()
                .map(|p| [U::c(p[0].f64()), U::c(p[1].f64())])
                .collect(),
            gt_joints_3d: cast_points(&self.gt_joints_3d),
            gt_part_masks: self.gt_part_masks.cast(),
            gt_mesh: EvalOnly {
                value: cast_points(&self.gt_mesh.value),
                reads: AtomicUsize::new(self.gt_mesh.reads()),
            },
            camera_gt: self.camera_gt.cast(),
        }
    }

    pub fn height(&self) -> usize {
        self.gt_part_masks.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.gt_part_masks.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub height: usize,
    pub width: usize,
    pub sigma_px: f64,
    pub scale_range: [f64; 2],
    pub tx_range: [f64; 2],
    pub ty_range: [f64; 2],
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            sigma_px: 2.0,
            scale_range: [0.85, 1.0],
            tx_range: [-0.05, 0.05],
            ty_range: [0.0, 0.1],
        }
    }
}

/// Rendered supervision for one posed, root-relative body.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub input_channels: Tensor<f64>,
    pub gt_joints_2d: Vec<[f64; 2]>,
    pub gt_part_masks: Tensor<f64>,
}

/// Hard z-buffered part labels; `None` marks background. Larger `z` is nearer.
pub fn rasterize_part_labels(
    uv: &[[f64; 2]],
    depth: &[f64],
    faces: &[[usize; 3]],
    part_of_face: &[usize],
    height: usize,
    width: usize,
) -> Vec<Option<usize>> {
    let mut zbuf = vec![f64::NEG_INFINITY; height * width];
    let mut label = vec![None; height * width];
    for (f, &part) in faces.iter().zip(part_of_face) {
        let [a, b, c] = [uv[f[0]], uv[f[1]], uv[f[2]]];
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area.abs() < 1e-14 {
            continue;
        }
        let umin = a[0].min(b[0]).min(c[0]);
        let umax = a[0].max(b[0]).max(c[0]);
        let vmin = a[1].min(b[1]).min(c[1]);
        let vmax = a[1].max(b[1]).max(c[1]);
        let (r0, c0) = to_pixel(umin, vmax, height, width);
        let (r1, c1) = to_pixel(umax, vmin, height, width);
        let (r_lo, r_hi) = (r0.ceil().max(0.0), r1.floor().min(height as f64 - 1.0));
        let (c_lo, c_hi) = (c0.ceil().max(0.0), c1.floor().min(width as f64 - 1.0));
        if r_lo > r_hi || c_lo > c_hi {
            continue;
        }
        let rows = r_lo as usize..=r_hi as usize;
        let cols = c_lo as usize..=c_hi as usize;
        for r in rows {
            for col in cols.clone() {
                let p: [f64; 2] = pixel_center(r, col, height, width);
                let w0 = ((b[0] - p[0]) * (c[1] - p[1]) - (b[1] - p[1]) * (c[0] - p[0])) / area;
                let w1 = ((c[0] - p[0]) * (a[1] - p[1]) - (c[1] - p[1]) * (a[0] - p[0])) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * depth[f[0]] + w1 * depth[f[1]] + w2 * depth[f[2]];
                let i = r * width + col;
                if z > zbuf[i] {
                    zbuf[i] = z;
                    label[i] = Some(part);
                }
            }
        }
    }
    label
}

/// Gaussian bump at a normalized point, rescaled so its peak pixel is exactly 1.
pub fn joint_heatmap(uv: [f64; 2], height: usize, width: usize, sigma_px: f64) -> Vec<f64> {
    let (rc, cc) = to_pixel(uv[0], uv[1], height, width);
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    let mut out: Vec<f64> = (0..height * width)
        .map(|i| {
            let (r, c) = ((i / width) as f64, (i % width) as f64);
            (-((r - rc).powi(2) + (c - cc).powi(2)) * inv).exp()
        })
        .collect();
    let peak = out.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        out.iter_mut().for_each(|x| *x /= peak);
    }
    out
}

/// Renders heatmaps and hard part masks for a root-relative posed body.
pub fn render_ground_truth(
    template: &BodyTemplate,
    vertices: &[[f64; 3]],
    joints_3d: &[[f64; 3]],
    camera: &CameraParams<f64>,
    config: &SampleConfig,
) -> Result<GroundTruth> {
    let (h, w) = (config.height, config.width);
    let proj = project_weak_perspective(vertices, camera);
    if let Some(vertex) = proj
        .uv
        .iter()
        .position(|p| !(p[0].abs() <= 1.0 && p[1].abs() <= 1.0))
    {
        return Err(Error::OutOfFrame { vertex });
    }
    let joints_2d = project_weak_perspective(joints_3d, camera).uv;
    let z = template.num_parts();
    let k = joints_2d.len();
    let labels = rasterize_part_labels(&proj.uv, &proj.depth, &template.mesh.faces, &template.mesh.part_of_face, h, w);
    let mut masks = vec![0.0; h * w * z];
    for (i, l) in labels.iter().enumerate() {
        if let Some(p) = l {
            masks[i * z + p] = 1.0;
        }
    }
    let heatmaps: Vec<Vec<f64>> = joints_2d.iter().map(|&j| joint_heatmap(j, h, w, config.sigma_px)).collect();
    let ch = k + z;
    let mut input = vec![0.0; h * w * ch];
    for i in 0..h * w {
        for (j, hm) in heatmaps.iter().enumerate() {
            input[i * ch + j] = hm[i];
        }
        input[i * ch + k..(i + 1) * ch].copy_from_slice(&masks[i * z..(i + 1) * z]);
    }
    Ok(GroundTruth {
        input_channels: Tensor::from_vec(&[h, w, ch], input)?,
        gt_joints_2d: joints_2d,
        gt_part_masks: Tensor::from_vec(&[h, w, z], masks)?,
    })
}

/// Uniform draw inside every joint's limits.
pub fn random_rotations<R: Rng>(template: &BodyTemplate, rng: &mut R) -> Vec<[f64; 3]> {
    template
        .skeleton
        .joint_limits
        .iter()
        .map(|l| [0, 1, 2].map(|d| rng.random_range(l.lo[d]..=l.hi[d])))
        .collect()
}

/// Subtracts the regressed root joint from vertices and joints.
pub fn root_relative(posed: &PosedBody) -> PosedBody {
    let root = posed.joints_3d[0];
    let shift = |p: &[f64; 3]| [p[0] - root[0], p[1] - root[1], p[2] - root[2]];
    PosedBody {
        vertices: posed.vertices.iter().map(shift).collect(),
        joints_3d: posed.joints_3d.iter().map(shift).collect(),
        clamped: posed.clamped,
    }
}

fn stream_rng(seed: u64, index: usize, domain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index as u64);
    rng
}

/// Root-relative posed meshes from uniform joint-limit sampling.
pub fn sample_poses(template: &BodyTemplate, count: usize, seed: u64) -> Result<Vec<PosedBody>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i, 1);
            let rot = random_rotations(template, &mut rng);
            Ok(root_relative(&pose_mesh(template, &rot)?))
        })
        .collect()
}

const MAX_REDRAWS: usize = 1000;

fn draw_sample(template: &BodyTemplate, config: &SampleConfig, rng: &mut ChaCha8Rng) -> Result<TrainingSample<f64>> {
    for _ in 0..MAX_REDRAWS {
        let rot = random_rotations(template, rng);
        let camera = CameraParams::new(
            rng.random_range(config.scale_range[0]..=config.scale_range[1]),
            rng.random_range(config.tx_range[0]..=config.tx_range[1]),
            rng.random_range(config.ty_range[0]..=config.ty_range[1]),
        )?;
        let posed = root_relative(&pose_mesh(template, &rot)?);
        match render_ground_truth(template, &posed.vertices, &posed.joints_3d, &camera, config) {
            Ok(gt) => {
                return Ok(TrainingSample {
                    input_channels: gt.input_channels,
                    gt_joints_2d: gt.gt_joints_2d,
                    gt_joints_3d: posed.joints_3d,
                    gt_part_masks: gt.gt_part_masks,
                    gt_mesh: EvalOnly::new(posed.vertices),
                    camera_gt: camera,
                })
            }
            Err(Error::OutOfFrame { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Invalid("could not draw an in-frame pose; widen the camera ranges".into()))
}

/// `count` i.i.d. samples; sample `i` depends only on `(seed, i)`.
pub fn sample_dataset<T: Real>(
    template: &BodyTemplate,
    count: usize,
    seed: u64,
    config: &SampleConfig,
) -> Result<Vec<TrainingSample<T>>> {
    if count == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i, 2);
            draw_sample(template, config, &mut rng).map(|s| s.cast())
        })
        .collect()
}

/// Checks the per-sample contract; returns a description of the first violation.
pub fn check_sample<T: Real>(sample: &TrainingSample<T>, num_joints: usize) -> std::result::Result<(), String> {
    let [h, w, ch] = *sample.input_channels.shape() else {
        return Err("input channels must be rank 3".into());
    };
    let z = ch - num_joints;
    if sample.gt_part_masks.shape() != [h, w, z] {
        return Err("mask shape".into());
    }
    if sample.input_channels.data().iter().any(|x| !(x.f64() >= 0.0 && x.f64() <= 1.0)) {
        return Err("input outside [0, 1]".into());
    }
    for px in sample.gt_part_masks.data().chunks_exact(z) {
        if px.iter().map(|x| x.f64()).sum::<f64>() > 1.0 + 1e-9 {
            return Err("overlapping part labels".into());
        }
    }
    for (k, j) in sample.gt_joints_2d.iter().enumerate() {
        let (rc, cc) = to_pixel(j[0].f64(), j[1].f64(), h, w);
        let (mut best, mut at) = (f64::MIN, 0);
        for i in 0..h * w {
            let v = sample.input_channels.data()[i * ch + k].f64();
            if v > best {
                best = v;
                at = i;
            }
        }
        let (r, c) = ((at / w) as f64, (at % w) as f64);
        if (r - rc).abs() > 1.0 || (c - cc).abs() > 1.0 {
            return Err(format!("heatmap {k} peaks at ({r}, {c}), joint at ({rc:.2}, {cc:.2})"));
        }
    }
    if sample.gt_joints_3d[0].iter().any(|x| x.f64().abs() > 1e-9) {
        return Err("root joint is not at the origin".into());
    }
    if sample.gt_joints_3d.len() != NUM_JOINTS {
        return Err("joint count".into());
    }
    Ok(())
}
