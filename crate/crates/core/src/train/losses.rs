//! The four training terms and their weighted sum.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::ops::{L1Mean, Mse, SparseMatMul, WeightedSum};
use crate::autodiff::{Primitive, Tape, Var};
use crate::body::TrainingSample;
use crate::error::{Error, Result};
use crate::net::{forward_network, BodyModel, NetworkOutput, NetworkParams};
use crate::prior::{prior_nll, GmmPrior};
use crate::render::{project_vjp, project_weak_perspective, render_soft_parts, render_soft_parts_vjp, CameraParams, SoftRenderConfig};
use crate::scalar::Real;
use crate::sparse::Csr;
use crate::tensor::Tensor;

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lap: f64,
    pub pose3d: f64,
    pub pose2d: f64,
    pub part: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lap: 1e-5,
            pose3d: 1.0,
            pose2d: 1.0,
            part: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.lap, self.pose3d, self.pose2d, self.part]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lap: f64,
    pub pose3d: f64,
    pub pose2d: f64,
    pub part2d: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn recomputed_total(&self) -> f64 {
        let w = &self.weights;
        w.lap * self.lap + w.pose3d * self.pose3d + w.pose2d * self.pose2d + w.part * self.part2d
    }
}

/// `J = G·Y`.
pub fn regress_joints<T: Real>(regressor: &Csr<T>, vertices: &[[T; 3]]) -> Result<Vec<[T; 3]>> {
    if vertices.len() != regressor.ncols() {
        return Err(Error::dim("regress_joints vertices", regressor.ncols(), vertices.len()));
    }
    let flat: Vec<T> = vertices.iter().flatten().copied().collect();
    Ok(regressor.mul_dense(&flat, 3).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn points3<T: Real>(t: &Tensor<T>) -> Vec<[T; 3]> {
    t.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn camera_of<T: Real>(t: &Tensor<T>) -> CameraParams<T> {
    let c = t.data();
    CameraParams::from_array([c[0], c[1], c[2]])
}

/// Weak-perspective projection; inputs `(points: M×3, camera: 3)`.
pub struct Project;

impl<T: Real> Primitive<T> for Project {
    fn name(&self) -> &'static str {
        "project"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if x[1].len() != 3 || x[0].shape().last() != Some(&3) {
            return Err(Error::dim("projection inputs", "M×3 and 3", format!("{:?}, {:?}", x[0].shape(), x[1].shape())));
        }
        let p = project_weak_perspective(&points3(x[0]), &camera_of(x[1]));
        Tensor::from_vec(&[p.uv.len(), 2], p.uv.into_iter().flatten().collect())
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let up: Vec<[T; 2]> = g.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let (dp, dc) = project_vjp(&points3(x[0]), &camera_of(x[1]), &up)?;
        Ok(vec![
            Some(Tensor::from_vec(x[0].shape(), dp.into_iter().flatten().collect())?),
            Some(Tensor::from_vec(&[3], dc.to_vec())?),
        ])
    }
}

/// Soft part masks; inputs `(vertices: N×3, camera: 3)`, output `H×W×Z`.
pub struct SoftRender {
    pub faces: Arc<Vec<[usize; 3]>>,
    pub part_of_face: Arc<Vec<usize>>,
    pub num_parts: usize,
    pub config: SoftRenderConfig,
}

impl<T: Real> Primitive<T> for SoftRender {
    fn name(&self) -> &'static str {
        "soft_render"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        render_soft_parts(&points3(x[0]), &self.faces, &self.part_of_face, self.num_parts, &camera_of(x[1]), &self.config)
    }

    fn vjp(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let (dv, dc) = render_soft_parts_vjp(
            &points3(x[0]),
            &self.faces,
            &self.part_of_face,
            self.num_parts,
            &camera_of(x[1]),
            &self.config,
            y,
            g,
        )?;
        Ok(vec![
            Some(Tensor::from_vec(x[0].shape(), dv.into_iter().flatten().collect())?),
            Some(Tensor::from_vec(&[3], dc.to_vec())?),
        ])
    }
}

/// Mixture NLL of Laplacian coordinates; input `Δ: N×3`, scalar output.
pub struct PriorNll<T> {
    pub prior: Arc<GmmPrior>,
    grad: Vec<[T; 3]>,
}

impl<T: Real> PriorNll<T> {
    pub fn new(prior: Arc<GmmPrior>) -> Self {
        Self { prior, grad: Vec::new() }
    }
}

impl<T: Real> Primitive<T> for PriorNll<T> {
    fn name(&self) -> &'static str {
        "prior_nll"
    }

    fn forward(&mut self, x: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (v, g) = prior_nll(&self.prior, &points3(x[0]))?;
        self.grad = g;
        Ok(Tensor::scalar(v))
    }

    fn vjp(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let k = g.item();
        let data = self.grad.iter().flatten().map(|&v| v * k).collect();
        Ok(vec![Some(Tensor::from_vec(x[0].shape(), data)?)])
    }
}

/// Everything the loss needs besides the network itself.
pub struct LossContext<'m, T> {
    pub model: &'m BodyModel<T>,
    pub prior: Arc<GmmPrior>,
    pub render: SoftRenderConfig,
    pub weights: LossWeights,
}

/// Term variables on the tape, in `(lap, pose3d, pose2d, part2d)` order.
pub struct LossVars {
    pub terms: [Var; 4],
    pub total: Var,
}

/// Appends the objective for `(vertices, camera)` to `tape`. Reads only
/// the joints, masks and camera-free targets of `sample`.
pub fn append_losses<T: Real>(
    tape: &mut Tape<'_, T>,
    vertices: Var,
    camera: Var,
    sample: &TrainingSample<T>,
    ctx: &LossContext<'_, T>,
) -> Result<(LossBreakdown, LossVars)> {
    let model = ctx.model;
    let delta = tape.apply(SparseMatMul(model.laplacian.clone()), &[vertices])?;
    let lap = tape.apply(PriorNll::new(ctx.prior.clone()), &[delta]).map_err(|e| tag(e, "lap"))?;
    let joints = tape.apply(SparseMatMul(model.joint_regressor.clone()), &[vertices])?;
    let target3: Vec<T> = sample.gt_joints_3d.iter().flatten().copied().collect();
    let pose3d = tape.apply(L1Mean { target: target3 }, &[joints]).map_err(|e| tag(e, "pose3d"))?;
    let proj = tape.apply(Project, &[joints, camera])?;
    let target2: Vec<T> = sample.gt_joints_2d.iter().flatten().copied().collect();
    let pose2d = tape.apply(L1Mean { target: target2 }, &[proj]).map_err(|e| tag(e, "pose2d"))?;
    let render = SoftRender {
        faces: model.faces.clone(),
        part_of_face: model.part_of_face.clone(),
        num_parts: model.num_parts,
        config: ctx.render,
    };
    let masks = tape.apply(render, &[vertices, camera]).map_err(|e| tag(e, "part2d"))?;
    let mse = Mse {
        target: sample.gt_part_masks.data().to_vec(),
    };
    let part = tape.apply(mse, &[masks]).map_err(|e| tag(e, "part2d"))?;
    let w = ctx.weights.as_array();
    let terms = [lap, pose3d, pose2d, part];
    let total = tape.apply(WeightedSum(w.iter().map(|&x| T::c(x)).collect()), &terms)?;
    let val = |v: Var| tape.value(v).item().f64();
    let breakdown = LossBreakdown {
        lap: val(lap),
        pose3d: val(pose3d),
        pose2d: val(pose2d),
        part2d: val(part),
        total: val(total),
        weights: ctx.weights,
    };
    Ok((breakdown, LossVars { terms, total }))
}

fn tag(e: Error, term: &'static str) -> Error {
    match e {
        Error::NonFinite { .. } => Error::non_finite("losses_train", format!("loss term {term}")),
        e => e,
    }
}

pub struct LossRecord<'a, T: Real> {
    pub breakdown: LossBreakdown,
    pub output: NetworkOutput<'a, T>,
    pub vars: LossVars,
}

impl<T: Real> LossRecord<'_, T> {
    /// Parameter gradients of the weighted total.
    pub fn gradients(&self) -> Result<crate::autodiff::Gradients<T>> {
        self.output.tape.backward_scalar(self.vars.total)
    }
}

pub fn compute_losses<'a, T: Real>(
    params: &'a NetworkParams<T>,
    sample: &'a TrainingSample<T>,
    ctx: &LossContext<'_, T>,
) -> Result<LossRecord<'a, T>> {
    let mut output = forward_network(params, ctx.model, &sample.input_channels)?;
    let (breakdown, vars) = append_losses(&mut output.tape, output.vertices, output.camera, sample, ctx)?;
    Ok(LossRecord { breakdown, output, vars })
}

/// Losses of a given prediction, bypassing the network.
pub fn prediction_losses<T: Real>(
    vertices: &[[T; 3]],
    camera: &CameraParams<T>,
    sample: &TrainingSample<T>,
    ctx: &LossContext<'_, T>,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let v = tape.param_owned(0, Tensor::from_vec(&[vertices.len(), 3], vertices.iter().flatten().copied().collect())?);
    let c = tape.param_owned(1, Tensor::from_vec(&[3], camera.to_array().to_vec())?);
    Ok(append_losses(&mut tape, v, c, sample, ctx)?.0)
}
