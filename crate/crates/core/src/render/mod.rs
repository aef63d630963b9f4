//! Weak-perspective camera and the differentiable part-mask renderer.

pub mod camera;
pub mod pgm;
pub mod soft;

pub use camera::{project_vjp, project_weak_perspective, CameraParams, Projection};
pub use soft::{render_soft_parts, render_soft_parts_vjp, SoftRenderConfig, SoftRenderer};

use crate::scalar::Real;

/// Normalized coordinates of the center of pixel `(row, col)`.
///
/// `u` grows with the column, `v` grows upward (row 0 is `v ≈ +1`).
#[inline]
pub fn pixel_center<T: Real>(row: usize, col: usize, height: usize, width: usize) -> [T; 2] {
    [
        T::c(-1.0 + (2.0 * col as f64 + 1.0) / width as f64),
        T::c(1.0 - (2.0 * row as f64 + 1.0) / height as f64),
    ]
}

/// Continuous `(row, col)` position of a normalized point.
#[inline]
pub fn to_pixel(u: f64, v: f64, height: usize, width: usize) -> (f64, f64) {
    ((1.0 - v) * height as f64 / 2.0 - 0.5, (u + 1.0) * width as f64 / 2.0 - 0.5)
}
