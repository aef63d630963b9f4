//! Smooth sigmoid-coverage rasterizer for per-part silhouettes.
//!
//! Each face covers pixel `p` with `c_f(p) = sigmoid(sharpness · sd_f(p))`, where
//! `sd_f` is the signed distance to the projected triangle boundary (positive
//! inside). Part channels combine faces by probabilistic OR,
//! `B_z(p) = 1 - Π_{f ∈ z} (1 - c_f(p))`, evaluated in log space as
//! `1 - exp(-Σ softplus(x_f))`. Contributions with logit below `-cutoff` are
//! dropped; the retained ones are shifted by `softplus(-cutoff)` so the image
//! stays continuous across the cut.

use serde::{Deserialize, Serialize};

use super::camera::{project_vjp, project_weak_perspective, CameraParams};
use super::pixel_center;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

const MIN_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftRenderConfig {
    pub height: usize,
    pub width: usize,
    /// Sigmoid steepness in 1/normalized-distance.
    pub sharpness: f64,
    /// Logit below which a face's coverage is treated as zero.
    pub cutoff: f64,
    /// Append a background channel `Π_f (1 - c_f)` after the part channels.
    pub background_channel: bool,
}

impl Default for SoftRenderConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            sharpness: 50.0,
            cutoff: 15.0,
            background_channel: false,
        }
    }
}

impl SoftRenderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sharpness > 0.0) || !self.sharpness.is_finite() {
            return Err(Error::Invalid(format!("sharpness must be positive, got {}", self.sharpness)));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::Invalid(format!("cutoff must be positive, got {}", self.cutoff)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Invalid("render size must be nonzero".into()));
        }
        Ok(())
    }

    pub fn channels(&self, num_parts: usize) -> usize {
        num_parts + usize::from(self.background_channel)
    }
}

/// Per-face constants for distance evaluation.
struct PreparedFace<T> {
    id: usize,
    corners: [[T; 2]; 3],
    orient: T,
    part: usize,
    rows: (usize, usize),
    cols: (usize, usize),
}

/// Signed distance from `p` to the triangle boundary and its gradient
/// w.r.t. the three corners.
fn signed_distance<T: Real>(p: [T; 2], tri: &[[T; 2]; 3], orient: T, margin: T) -> Option<(T, [[T; 2]; 3])> {
    let mut line = [T::zero(); 3];
    let mut geo = [([T::zero(); 2], [T::zero(); 2], T::zero(), T::zero()); 3];
    for e in 0..3 {
        let p0 = tri[e];
        let p1 = tri[(e + 1) % 3];
        let ev = [p1[0] - p0[0], p1[1] - p0[1]];
        let r = [p[0] - p0[0], p[1] - p0[1]];
        let len = (ev[0] * ev[0] + ev[1] * ev[1]).sqrt();
        let cr = ev[0] * r[1] - ev[1] * r[0];
        line[e] = orient * cr / len;
        geo[e] = (ev, r, len, cr);
    }
    let min_line = line[0].min(line[1]).min(line[2]);
    if min_line < -margin {
        return None;
    }
    let mut grad = [[T::zero(); 2]; 3];
    // d(line_e) with respect to the edge endpoints.
    let line_grad = |e: usize| -> ([T; 2], [T; 2]) {
        let (ev, r, len, cr) = geo[e];
        let inv = T::one() / len;
        let inv3 = cr * inv * inv * inv;
        let g0 = [
            orient * ((ev[1] - r[1]) * inv + ev[0] * inv3),
            orient * ((r[0] - ev[0]) * inv + ev[1] * inv3),
        ];
        let g1 = [
            orient * (r[1] * inv - ev[0] * inv3),
            orient * (-r[0] * inv - ev[1] * inv3),
        ];
        (g0, g1)
    };
    if min_line > T::zero() {
        let e = (0..3).fold(0, |best, e| if line[e] < line[best] { e } else { best });
        let (g0, g1) = line_grad(e);
        grad[e] = g0;
        grad[(e + 1) % 3] = g1;
        return Some((line[e], grad));
    }
    // Outside: distance to the nearest edge segment, negated.
    let mut best = T::infinity();
    let mut best_kind = (0usize, 0u8);
    for e in 0..3 {
        let (ev, r, len, _) = geo[e];
        let t = (r[0] * ev[0] + r[1] * ev[1]) / (len * len);
        let (dist, kind) = if t <= T::zero() {
            ((r[0] * r[0] + r[1] * r[1]).sqrt(), 0u8)
        } else if t >= T::one() {
            let q = tri[(e + 1) % 3];
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            ((dx * dx + dy * dy).sqrt(), 1u8)
        } else {
            (line[e].abs(), 2u8)
        };
        if dist < best {
            best = dist;
            best_kind = (e, kind);
        }
    }
    let (e, kind) = best_kind;
    match kind {
        0 | 1 => {
            let v = if kind == 0 { e } else { (e + 1) % 3 };
            if best > T::zero() {
                grad[v] = [(p[0] - tri[v][0]) / best, (p[1] - tri[v][1]) / best];
            }
        }
        _ => {
            let sign = if line[e] >= T::zero() { -T::one() } else { T::one() };
            let (g0, g1) = line_grad(e);
            grad[e] = [sign * g0[0], sign * g0[1]];
            grad[(e + 1) % 3] = [sign * g1[0], sign * g1[1]];
        }
    }
    Some((-best, grad))
}

/// Renderer bound to one topology; stateless across calls.
#[derive(Debug, Clone)]
pub struct SoftRenderer<'a> {
    pub faces: &'a [[usize; 3]],
    pub part_of_face: &'a [usize],
    pub num_parts: usize,
    pub config: SoftRenderConfig,
}

impl<'a> SoftRenderer<'a> {
    pub fn new(
        faces: &'a [[usize; 3]],
        part_of_face: &'a [usize],
        num_parts: usize,
        config: SoftRenderConfig,
    ) -> Result<Self> {
        config.validate()?;
        if faces.len() != part_of_face.len() {
            return Err(Error::dim("renderer part_of_face", faces.len(), part_of_face.len()));
        }
        if let Some(&p) = part_of_face.iter().find(|&&p| p >= num_parts) {
            return Err(Error::Invalid(format!("face part {p} >= {num_parts} parts")));
        }
        Ok(Self {
            faces,
            part_of_face,
            num_parts,
            config,
        })
    }

    pub fn channels(&self) -> usize {
        self.config.channels(self.num_parts)
    }

    fn margin(&self) -> f64 {
        self.config.cutoff / self.config.sharpness
    }

    fn prepare<T: Real>(&self, uv: &[[T; 2]]) -> Vec<PreparedFace<T>> {
        let (h, w) = (self.config.height, self.config.width);
        let margin = self.margin();
        let mut out = Vec::with_capacity(self.faces.len());
        for (id, (f, &part)) in self.faces.iter().zip(self.part_of_face).enumerate() {
            let corners = [uv[f[0]], uv[f[1]], uv[f[2]]];
            let cross = (corners[1][0] - corners[0][0]) * (corners[2][1] - corners[0][1])
                - (corners[1][1] - corners[0][1]) * (corners[2][0] - corners[0][0]);
            if !(cross.abs().f64() * 0.5 >= MIN_AREA) {
                continue;
            }
            let orient = if cross > T::zero() { T::one() } else { -T::one() };
            let us = corners.map(|c| c[0].f64());
            let vs = corners.map(|c| c[1].f64());
            let umin = us.iter().cloned().fold(f64::INFINITY, f64::min) - margin;
            let umax = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + margin;
            let vmin = vs.iter().cloned().fold(f64::INFINITY, f64::min) - margin;
            let vmax = vs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + margin;
            // Pixel centers: u_c = -1 + (2c+1)/W, v_r = 1 - (2r+1)/H.
            let c0 = ((umin + 1.0) * w as f64 / 2.0 - 0.5).ceil().max(0.0);
            let c1 = ((umax + 1.0) * w as f64 / 2.0 - 0.5).floor().min(w as f64 - 1.0);
            let r0 = ((1.0 - vmax) * h as f64 / 2.0 - 0.5).ceil().max(0.0);
            let r1 = ((1.0 - vmin) * h as f64 / 2.0 - 0.5).floor().min(h as f64 - 1.0);
            if c0 > c1 || r0 > r1 {
                continue;
            }
            out.push(PreparedFace {
                id,
                corners,
                orient,
                part,
                rows: (r0 as usize, r1 as usize),
                cols: (c0 as usize, c1 as usize),
            });
        }
        out
    }

    /// Forward pass from projected vertex positions.
    pub fn render_uv<T: Real>(&self, uv: &[[T; 2]]) -> Result<Tensor<T>> {
        if let Some(bad) = self.faces.iter().flatten().find(|&&i| i >= uv.len()) {
            return Err(Error::dim("renderer vertices", format!("> {bad}"), uv.len()));
        }
        let (h, w) = (self.config.height, self.config.width);
        let ch = self.channels();
        let sharp = T::c(self.config.sharpness);
        let cutoff = T::c(self.config.cutoff);
        let shift = (-cutoff).softplus();
        let margin = T::c(self.margin());
        let bg = self.config.background_channel.then_some(self.num_parts);
        let mut acc = vec![T::zero(); h * w * ch];
        for face in self.prepare(uv) {
            for r in face.rows.0..=face.rows.1 {
                for c in face.cols.0..=face.cols.1 {
                    let p = pixel_center::<T>(r, c, h, w);
                    let Some((sd, _)) = signed_distance(p, &face.corners, face.orient, margin) else {
                        continue;
                    };
                    let x = sharp * sd;
                    if x <= -cutoff {
                        continue;
                    }
                    let term = x.softplus() - shift;
                    let base = (r * w + c) * ch;
                    acc[base + face.part] += term;
                    if let Some(b) = bg {
                        acc[base + b] += term;
                    }
                }
            }
        }
        for (i, a) in acc.iter_mut().enumerate() {
            let survive = (-*a).exp();
            *a = if Some(i % ch) == bg { survive } else { T::one() - survive };
        }
        Tensor::from_vec(&[h, w, ch], acc)
    }

    /// VJP w.r.t. projected vertex positions, given the forward output.
    pub fn render_uv_vjp<T: Real>(&self, uv: &[[T; 2]], output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Vec<[T; 2]>> {
        let (h, w) = (self.config.height, self.config.width);
        let ch = self.channels();
        if upstream.shape() != [h, w, ch] || output.shape() != [h, w, ch] {
            return Err(Error::dim("renderer upstream", format!("{:?}", [h, w, ch]), format!("{:?}", upstream.shape())));
        }
        let sharp = T::c(self.config.sharpness);
        let cutoff = T::c(self.config.cutoff);
        let margin = T::c(self.margin());
        let bg = self.config.background_channel.then_some(self.num_parts);
        let out = output.data();
        let g = upstream.data();
        let mut grad = vec![[T::zero(); 2]; uv.len()];
        for face in self.prepare(uv) {
            let verts = self.faces[face.id];
            let mut fg = [[T::zero(); 2]; 3];
            for r in face.rows.0..=face.rows.1 {
                for c in face.cols.0..=face.cols.1 {
                    let base = (r * w + c) * ch;
                    // dB/dx = (1 - B) σ(x) for a part channel; the background channel carries the opposite sign.
                    let mut up = g[base + face.part] * (T::one() - out[base + face.part]);
                    if let Some(b) = bg {
                        up -= g[base + b] * out[base + b];
                    }
                    if up == T::zero() {
                        continue;
                    }
                    let p = pixel_center::<T>(r, c, h, w);
                    let Some((sd, dsd)) = signed_distance(p, &face.corners, face.orient, margin) else {
                        continue;
                    };
                    let x = sharp * sd;
                    if x <= -cutoff {
                        continue;
                    }
                    let k = up * x.sigmoid() * sharp;
                    for v in 0..3 {
                        fg[v][0] += k * dsd[v][0];
                        fg[v][1] += k * dsd[v][1];
                    }
                }
            }
            for v in 0..3 {
                grad[verts[v]][0] += fg[v][0];
                grad[verts[v]][1] += fg[v][1];
            }
        }
        Ok(grad)
    }
}

/// Projects `vertices` with `camera` and renders one soft mask per part.
pub fn render_soft_parts<T: Real>(
    vertices: &[[T; 3]],
    faces: &[[usize; 3]],
    part_of_face: &[usize],
    num_parts: usize,
    camera: &CameraParams<T>,
    config: &SoftRenderConfig,
) -> Result<Tensor<T>> {
    let renderer = SoftRenderer::new(faces, part_of_face, num_parts, *config)?;
    let proj = project_weak_perspective(vertices, camera);
    renderer.render_uv(&proj.uv)
}

/// VJP of [`render_soft_parts`] w.r.t. vertices and `[s, t_x, t_y]`.
#[allow(clippy::too_many_arguments)]
pub fn render_soft_parts_vjp<T: Real>(
    vertices: &[[T; 3]],
    faces: &[[usize; 3]],
    part_of_face: &[usize],
    num_parts: usize,
    camera: &CameraParams<T>,
    config: &SoftRenderConfig,
    output: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Vec<[T; 3]>, [T; 3])> {
    let renderer = SoftRenderer::new(faces, part_of_face, num_parts, *config)?;
    let proj = project_weak_perspective(vertices, camera);
    let duv = renderer.render_uv_vjp(&proj.uv, output, upstream)?;
    project_vjp(vertices, camera, &duv)
}
