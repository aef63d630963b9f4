//! Image channels → embedding → graph convolutions → `(Y, camera)`.

use super::layers::{AttachedGraphConv, Conv2d, GraphConv};
use super::model::BodyModel;
use super::params::NetworkParams;
use crate::autodiff::ops::{AddBias, ExpFirst, MatMul, MeanRows, Reshape, RootCenter};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::render::CameraParams;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub struct NetworkOutput<'a, T: Real> {
    pub tape: Tape<'a, T>,
    pub embedding: Var,
    /// Outputs of every graph convolution, in order.
    pub layers: Vec<Var>,
    /// Root-centred vertices, `N × 3`.
    pub vertices: Var,
    /// `(s, t_x, t_y)` with `s > 0`.
    pub camera: Var,
}

impl<T: Real> NetworkOutput<'_, T> {
    pub fn vertices(&self) -> Vec<[T; 3]> {
        self.tape.value(self.vertices).data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    pub fn camera(&self) -> CameraParams<T> {
        let c = self.tape.value(self.camera).data();
        CameraParams::from_array([c[0], c[1], c[2]])
    }
}

fn check_input<T: Real>(params: &NetworkParams<T>, input: &Tensor<T>) -> Result<()> {
    let c = &params.config;
    let want = [c.height, c.width, c.input_channels];
    if input.shape() != want {
        return Err(Error::dim("network input", format!("{want:?}"), format!("{:?}", input.shape())));
    }
    Ok(())
}

/// Encoder only: `H × W × (K+Z)` → `d`.
pub fn embed_inputs<'a, T: Real>(params: &'a NetworkParams<T>, tape: &mut Tape<'a, T>, input: Var) -> Result<Var> {
    let c = &params.config;
    let slots = params.slots();
    let mut x = input;
    for &(w, b) in &slots.encoder {
        let wv = tape.param(w, &params.tensors[w]);
        let bv = tape.param(b, &params.tensors[b]);
        x = tape.apply(Conv2d::new(c.kernel, c.stride, c.padding, true), &[x, wv, bv])?;
    }
    let flat = tape.value(x).len();
    x = tape.apply(Reshape(vec![1, flat]), &[x])?;
    let fw = tape.param(slots.fc.0, &params.tensors[slots.fc.0]);
    let fb = tape.param(slots.fc.1, &params.tensors[slots.fc.1]);
    x = tape.apply(MatMul, &[x, fw])?;
    x = tape.apply(AddBias, &[x, fb])?;
    tape.apply(Reshape(vec![c.embed_dim]), &[x])
}

pub fn forward_network<'a, T: Real>(
    params: &'a NetworkParams<T>,
    model: &BodyModel<T>,
    input: &'a Tensor<T>,
) -> Result<NetworkOutput<'a, T>> {
    check_input(params, input)?;
    let slots = params.slots();
    let mut tape = Tape::new();
    let x = tape.constant_ref(input);
    let embedding = embed_inputs(params, &mut tape, x)?;
    let t_max = slots.gconv.len();
    let mut layers = Vec::with_capacity(t_max);
    let mut h = embedding;
    for (t, &slot) in slots.gconv.iter().enumerate() {
        let w = tape.param(slot, &params.tensors[slot]);
        let activate = t + 1 < t_max;
        let out = if t == 0 {
            let op = AttachedGraphConv {
                abar_v: model.abar_v.clone(),
                activate,
            };
            tape.apply(op, &[h, w])
        } else {
            tape.apply(GraphConv::new(model.abar.clone(), activate), &[h, w])
        };
        h = out.map_err(|e| match e {
            Error::NonFinite { .. } => Error::non_finite("graph_net", format!("graph conv layer {}", t + 1)),
            e => e,
        })?;
        layers.push(h);
    }
    let vertices = tape.apply(RootCenter(model.root_weights.clone()), &[h])?;
    let pooled = tape.apply(MeanRows, &[layers[t_max - 2]])?;
    let pooled = tape.apply(Reshape(vec![1, tape.value(pooled).len()]), &[pooled])?;
    let cw = tape.param(slots.camera.0, &params.tensors[slots.camera.0]);
    let cb = tape.param(slots.camera.1, &params.tensors[slots.camera.1]);
    let cam = tape.apply(MatMul, &[pooled, cw])?;
    let cam = tape.apply(AddBias, &[cam, cb])?;
    let cam = tape.apply(Reshape(vec![3]), &[cam])?;
    let camera = tape.apply(ExpFirst, &[cam])?;
    Ok(NetworkOutput {
        tape,
        embedding,
        layers,
        vertices,
        camera,
    })
}
