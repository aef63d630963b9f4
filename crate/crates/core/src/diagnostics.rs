//! Finite-difference gate over every differentiable piece of the objective.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{finite_diff_check, Tape, Var};
use crate::body::{build_template, sample_dataset, sample_poses, SampleConfig};
use crate::error::Result;
use crate::mesh::{build_mesh_graph, uniform_laplacian};
use crate::net::layers::{AttachedGraphConv, GraphConv};
use crate::net::{BodyModel, NetConfig, NetworkParams};
use crate::prior::{fit_prior_from_meshes, GmmFitConfig};
use crate::render::SoftRenderConfig;
use crate::tensor::Tensor;
use crate::train::losses::{PriorNll, Project, SoftRender};
use crate::train::{append_losses, compute_losses, LossContext, LossWeights};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_PROBES: usize = 100;
/// Central-difference step; large enough that roundoff stays well below the
/// tolerance on the O(1e4) prior NLL values.
pub const GRADCHECK_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub name: &'static str,
    pub probes: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

fn rand_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    Tensor::from_vec(shape, data).expect("shape and length agree")
}

fn points_tensor(points: &[[f64; 3]]) -> Tensor<f64> {
    Tensor::from_vec(&[points.len(), 3], points.iter().flatten().copied().collect()).expect("N×3")
}

/// Checks `⟨r, build(inputs)⟩` for a random fixed `r` (or `r = 1` for a scalar
/// output), probing across the concatenation of all inputs.
fn check_graph<F>(name: &'static str, inputs: Vec<Tensor<f64>>, build: F, seed: u64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let run = |xs: &[Tensor<f64>]| -> Result<(Tensor<f64>, Tape<'static, f64>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().enumerate().map(|(i, x)| tape.param_owned(i, x.clone())).collect();
        let y = build(&mut tape, &vars)?;
        Ok((tape.value(y).clone(), tape, y))
    };
    let (y, tape, root) = run(&inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = if y.len() == 1 {
        Tensor::from_vec(y.shape(), vec![1.0])?
    } else {
        rand_tensor(y.shape(), 1.0, &mut rng)
    };
    let grads = tape.backward(root, &r)?;
    let mut point = Vec::new();
    let mut grad = Vec::new();
    for (slot, x) in inputs.iter().enumerate() {
        point.extend_from_slice(x.data());
        match grads.get(slot) {
            Some(g) => grad.extend_from_slice(g.data()),
            None => grad.extend(std::iter::repeat_n(0.0, x.len())),
        }
    }
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|x| x.shape().to_vec()).collect();
    let worst = finite_diff_check(
        |p| {
            let mut xs = Vec::with_capacity(shapes.len());
            let mut at = 0;
            for s in &shapes {
                let n: usize = s.iter().product();
                xs.push(Tensor::from_vec(s, p[at..at + n].to_vec())?);
                at += n;
            }
            Ok(run(&xs)?.0.dot(&r))
        },
        &point,
        &grad,
        GRADCHECK_PROBES,
        GRADCHECK_EPS,
        seed,
    )?;
    Ok(report(name, worst))
}

fn report(name: &'static str, worst: crate::autodiff::ProbeResult) -> GradcheckReport {
    GradcheckReport {
        name,
        probes: GRADCHECK_PROBES,
        max_rel_error: worst.rel_error,
        worst_index: worst.index,
        analytic: worst.analytic,
        numeric: worst.numeric,
        passed: worst.rel_error <= GRADCHECK_TOLERANCE,
    }
}

/// Runs every check in 64-bit mode on the synthetic template.
pub fn run_gradchecks(seed: u64) -> Result<Vec<GradcheckReport>> {
    let res = 32;
    let template = build_template(0)?;
    let graph = build_mesh_graph(&template.mesh)?;
    let (lap, _) = uniform_laplacian(&graph, &template.mesh.vertices)?;
    let meshes: Vec<_> = sample_poses(&template, 500, seed)?.into_iter().map(|p| p.vertices).collect();
    let gmm = GmmFitConfig {
        seed,
        ..GmmFitConfig::default()
    };
    let prior = Arc::new(fit_prior_from_meshes(&lap, &meshes, &gmm)?.0);
    let model = BodyModel::<f64>::from_template(&template)?;
    let render = SoftRenderConfig {
        height: res,
        width: res,
        ..SoftRenderConfig::default()
    };
    let sc = SampleConfig {
        height: res,
        width: res,
        ..SampleConfig::default()
    };
    let sample = sample_dataset::<f64>(&template, 2, seed.wrapping_add(1), &sc)?.remove(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // A plausible prediction: another posed mesh, slightly perturbed, under
    // a camera near the sample's.
    let other = sample_poses(&template, 1, seed.wrapping_add(2))?.remove(0).vertices;
    let jitter = rand_tensor(&[other.len(), 3], 0.005, &mut rng);
    let mut vertices = points_tensor(&other);
    vertices.add_assign(&jitter);
    let cam = sample.camera_gt.to_array();
    let camera = Tensor::from_vec(&[3], vec![cam[0] * 0.95, cam[1] + 0.02, cam[2] - 0.01])?;

    let n = model.num_vertices();
    let mut out = Vec::new();
    let abar = model.abar.clone();
    out.push(check_graph(
        "graph_conv",
        vec![rand_tensor(&[n, 8], 1.0, &mut rng), rand_tensor(&[8, 6], 0.5, &mut rng)],
        |t, v| t.apply(GraphConv::new(abar.clone(), true), v),
        seed,
    )?);
    let abar_v = model.abar_v.clone();
    out.push(check_graph(
        "graph_conv_attached",
        vec![rand_tensor(&[8], 1.0, &mut rng), rand_tensor(&[11, 6], 0.5, &mut rng)],
        |t, v| {
            let op = AttachedGraphConv {
                abar_v: abar_v.clone(),
                activate: true,
            };
            t.apply(op, v)
        },
        seed,
    )?);
    let delta = lap.matrix.mul_dense(vertices.data(), 3);
    out.push(check_graph(
        "gmm_nll",
        vec![Tensor::from_vec(&[n, 3], delta)?],
        |t, v| t.apply(PriorNll::new(prior.clone()), v),
        seed,
    )?);
    let joints = model.joint_regressor.mul_dense(vertices.data(), 3);
    out.push(check_graph(
        "projection",
        vec![Tensor::from_vec(&[model.num_joints, 3], joints)?, camera.clone()],
        |t, v| t.apply(Project, v),
        seed,
    )?);
    let soft = || SoftRender {
        faces: model.faces.clone(),
        part_of_face: model.part_of_face.clone(),
        num_parts: model.num_parts,
        config: render,
    };
    out.push(check_graph(
        "soft_rasterizer",
        vec![vertices.clone(), camera.clone()],
        |t, v| t.apply(soft(), v),
        seed,
    )?);

    let terms: [(&'static str, usize); 4] = [("loss_lap", 0), ("loss_pose3d", 1), ("loss_pose2d", 2), ("loss_part2d", 3)];
    for (name, term) in terms {
        let mut w = [0.0; 4];
        w[term] = 1.0;
        let ctx = LossContext {
            model: &model,
            prior: prior.clone(),
            render,
            weights: LossWeights {
                lap: w[0],
                pose3d: w[1],
                pose2d: w[2],
                part: w[3],
            },
        };
        out.push(check_graph(
            name,
            vec![vertices.clone(), camera.clone()],
            |t, v| Ok(append_losses(t, v[0], v[1], &sample, &ctx)?.1.total),
            seed,
        )?);
    }

    out.push(end_to_end(&template, &model, prior, seed)?);
    Ok(out)
}

/// Total loss with respect to every network parameter, through a reduced
/// network on 16×16 inputs.
fn end_to_end(
    template: &crate::body::BodyTemplate,
    model: &BodyModel<f64>,
    prior: Arc<crate::prior::GmmPrior>,
    seed: u64,
) -> Result<GradcheckReport> {
    let res = 16;
    let sc = SampleConfig {
        height: res,
        width: res,
        ..SampleConfig::default()
    };
    let sample = sample_dataset::<f64>(template, 1, seed.wrapping_add(3), &sc)?.remove(0);
    let net = NetConfig {
        height: res,
        width: res,
        encoder_channels: vec![4, 8, 8],
        embed_dim: 16,
        gconv_widths: vec![16, 16, 8, 8, 3],
        ..NetConfig::default()
    };
    let ctx = LossContext {
        model,
        prior,
        render: SoftRenderConfig {
            height: res,
            width: res,
            ..SoftRenderConfig::default()
        },
        weights: LossWeights::default(),
    };
    let mut params = NetworkParams::<f64>::init(&net, seed)?;
    let record = compute_losses(&params, &sample, &ctx)?;
    let grads = record.gradients()?;
    let grad: Vec<f64> = params
        .tensors
        .iter()
        .enumerate()
        .flat_map(|(i, t)| match grads.get(i) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; t.len()],
        })
        .collect();
    drop(record);
    let point = params.flatten();
    let worst = finite_diff_check(
        |p| {
            params.set_flat(p)?;
            Ok(compute_losses(&params, &sample, &ctx)?.breakdown.total)
        },
        &point,
        &grad,
        GRADCHECK_PROBES,
        GRADCHECK_EPS,
        seed,
    )?;
    Ok(report("end_to_end", worst))
}
