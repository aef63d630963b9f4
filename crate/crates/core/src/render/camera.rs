use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Weak-perspective camera `c_w = [s, t_x, t_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams<T> {
    pub s: T,
    pub tx: T,
    pub ty: T,
}

impl<T: Real> CameraParams<T> {
    pub fn new(s: T, tx: T, ty: T) -> Result<Self> {
        if !(s > T::zero()) {
            return Err(Error::Invalid(format!("camera scale must be positive, got {s}")));
        }
        Ok(Self { s, tx, ty })
    }

    pub fn identity() -> Self {
        Self {
            s: T::one(),
            tx: T::zero(),
            ty: T::zero(),
        }
    }

    pub fn to_array(self) -> [T; 3] {
        [self.s, self.tx, self.ty]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self {
            s: a[0],
            tx: a[1],
            ty: a[2],
        }
    }

    pub fn cast<U: Real>(self) -> CameraParams<U> {
        CameraParams {
            s: U::c(self.s.f64()),
            tx: U::c(self.tx.f64()),
            ty: U::c(self.ty.f64()),
        }
    }
}

/// Projected points with the discarded depth kept for occlusion ordering.
#[derive(Debug, Clone)]
pub struct Projection<T> {
    pub uv: Vec<[T; 2]>,
    pub depth: Vec<T>,
}

/// `(u, v) = s·(x, y) + (t_x, t_y)`.
pub fn project_weak_perspective<T: Real>(points: &[[T; 3]], camera: &CameraParams<T>) -> Projection<T> {
    let uv = points
        .iter()
        .map(|p| [camera.s * p[0] + camera.tx, camera.s * p[1] + camera.ty])
        .collect();
    let depth = points.iter().map(|p| p[2]).collect();
    Projection { uv, depth }
}

/// Jacobian of one projected point: `∂(u,v)/∂(x,y,z)` and `∂(u,v)/∂(s,t_x,t_y)`.
pub fn project_jacobian<T: Real>(point: &[T; 3], camera: &CameraParams<T>) -> ([[T; 3]; 2], [[T; 3]; 2]) {
    let (z, o) = (T::zero(), T::one());
    (
        [[camera.s, z, z], [z, camera.s, z]],
        [[point[0], o, z], [point[1], z, o]],
    )
}

/// VJP of the projection: returns `(∂/∂points, ∂/∂[s, t_x, t_y])`.
pub fn project_vjp<T: Real>(
    points: &[[T; 3]],
    camera: &CameraParams<T>,
    upstream: &[[T; 2]],
) -> Result<(Vec<[T; 3]>, [T; 3])> {
    if upstream.len() != points.len() {
        return Err(Error::dim("projection upstream", points.len(), upstream.len()));
    }
    let mut dcam = [T::zero(); 3];
    let dpoints = points
        .iter()
        .zip(upstream)
        .map(|(p, g)| {
            dcam[0] += g[0] * p[0] + g[1] * p[1];
            dcam[1] += g[0];
            dcam[2] += g[1];
            [camera.s * g[0], camera.s * g[1], T::zero()]
        })
        .collect();
    Ok((dpoints, dcam))
}
