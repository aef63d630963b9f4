//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.

use std::sync::Arc;
use std::time::Instant;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lapmesh::body::{build_template, sample_dataset, sample_poses, BodyTemplate, SampleConfig};
use lapmesh::config::PipelineConfig;
use lapmesh::diagnostics::{run_gradchecks, GRADCHECK_TOLERANCE};
use lapmesh::eval::{evaluate, mpve, procrustes_error};
use lapmesh::mesh::{build_mesh_graph, uniform_laplacian, LaplacianOperator, MeshGraph};
use lapmesh::net::BodyModel;
use lapmesh::pipeline::{fit_template_prior, run_pipeline, sample_splits};
use lapmesh::prior::{axis_columns, fit_prior_from_meshes, prior_nll, GmmFitConfig};
use lapmesh::render::{pixel_center, SoftRenderConfig, SoftRenderer};
use lapmesh::train::{train, LossWeights, TrainConfig, TrainOutput};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn template_and_laplacian() -> (BodyTemplate, MeshGraph<f64>, LaplacianOperator<f64>) {
    let t = build_template(0).unwrap();
    let g = build_mesh_graph(&t.mesh).unwrap();
    let (l, _) = uniform_laplacian(&g, &t.mesh.vertices).unwrap();
    (t, g, l)
}

fn apply(l: &LaplacianOperator<f64>, v: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let flat: Vec<f64> = v.iter().flatten().copied().collect();
    l.matrix.mul_dense(&flat, 3).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn max_abs_diff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let reports = run_gradchecks(0).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let all = reports.iter().all(|r| r.probes == 100 && r.max_rel_error <= GRADCHECK_TOLERANCE);
    for r in &reports {
        println!("    {:<20} max rel err {:.2e}", r.name, r.max_rel_error);
    }
    outcome(
        all && secs < 60.0,
        format!("{} checks, worst {} {:.2e} (≤ 1e-4), {secs:.1} s (< 60 s)", reports.len(), worst.name, worst.max_rel_error),
    )
}

fn criterion_2() -> Outcome {
    let (t, g, l) = template_and_laplacian();
    let v = &t.mesh.vertices;
    let n = v.len();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ones = vec![[1.0; 3]; n];
    let constant = apply(&l, &ones).iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let shift = [0.37, -1.2, 2.5];
    let moved: Vec<[f64; 3]> = v.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect();
    let translation = max_abs_diff(&apply(&l, &moved), &apply(&l, v));
    let x: Vec<[f64; 3]> = (0..n).map(|_| [rng.random::<f64>() - 0.5, rng.random(), rng.random::<f64>() * 2.0]).collect();
    let (a, b) = (1.7, -0.6);
    let mix: Vec<[f64; 3]> = v.iter().zip(&x).map(|(p, q)| [0, 1, 2].map(|d| a * p[d] + b * q[d])).collect();
    let (lv, lx) = (apply(&l, v), apply(&l, &x));
    let combo: Vec<[f64; 3]> = lv.iter().zip(&lx).map(|(p, q)| [0, 1, 2].map(|d| a * p[d] + b * q[d])).collect();
    let linearity = max_abs_diff(&apply(&l, &mix), &combo);
    // Moving any vertex onto its 1-ring centroid zeroes its Laplacian coordinate.
    let mut centroid: f64 = 0.0;
    for i in 0..n {
        let nb = g.neighbors(i);
        let mut w = v.clone();
        w[i] = [0, 1, 2].map(|d| nb.iter().map(|&j| v[j][d]).sum::<f64>() / nb.len() as f64);
        let delta = [0, 1, 2].map(|d| l.matrix.row(i).map(|(j, c)| c * w[j][d]).sum::<f64>());
        centroid = centroid.max(delta.iter().fold(0.0, |m, x: &f64| m.max(x.abs())));
    }
    let worst = constant.max(translation).max(linearity).max(centroid);
    outcome(
        worst <= 1e-10,
        format!("N={n}: L·1 {constant:.1e}, translation {translation:.1e}, linearity {linearity:.1e}, centroid {centroid:.1e} (≤ 1e-10)"),
    )
}

fn criterion_3() -> Outcome {
    let (t, _, l) = template_and_laplacian();
    let meshes: Vec<_> = sample_poses(&t, 500, 11).unwrap().into_iter().map(|p| p.vertices).collect();
    let mut worst_rise = f64::NEG_INFINITY;
    for k in [1, 4, 8] {
        let cfg = GmmFitConfig {
            components: k,
            ..GmmFitConfig::default()
        };
        let (_, report) = fit_prior_from_meshes(&l, &meshes, &cfg).unwrap();
        for trace in &report.nll_traces {
            for w in trace.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
        }
    }
    // K = 1 against the closed-form per-dimension mean and variance.
    let cfg = GmmFitConfig {
        components: 1,
        ..GmmFitConfig::default()
    };
    let (prior, _) = fit_prior_from_meshes(&l, &meshes, &cfg).unwrap();
    let deltas: Vec<Vec<[f64; 3]>> = meshes.iter().map(|m| apply(&l, m)).collect();
    let mut closed = 0.0f64;
    for (axis, gmm) in prior.axes.iter().enumerate() {
        let cols: Vec<Vec<f64>> = deltas.iter().map(|m| axis_columns(m)[axis].clone()).collect();
        for d in 0..gmm.dim {
            let m = cols.len() as f64;
            let mean = cols.iter().map(|c| c[d]).sum::<f64>() / m;
            let var = (cols.iter().map(|c| (c[d] - mean).powi(2)).sum::<f64>() / m).max(cfg.variance_floor);
            closed = closed.max((gmm.mean(0)[d] - mean).abs()).max((gmm.variance(0)[d] - var).abs());
        }
    }
    outcome(
        worst_rise <= 1e-9 && closed <= 1e-9,
        format!("K∈{{1,4,8}} largest per-step NLL rise {worst_rise:.1e} (≤ 1e-9); K=1 closed-form gap {closed:.1e} (≤ 1e-9)"),
    )
}

/// `(noise - LB) / (held - LB)`: the NLLs of a peaked mixture are negative,
/// so both are measured from the prior's lower bound.
fn criterion_4() -> Outcome {
    let (t, _, l) = template_and_laplacian();
    let meshes: Vec<_> = sample_poses(&t, 500, 21).unwrap().into_iter().map(|p| p.vertices).collect();
    let held: Vec<_> = sample_poses(&t, 20, 22).unwrap().into_iter().map(|p| p.vertices).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::INFINITY;
    let mut lines = Vec::new();
    for k in [1, 4, 8] {
        let cfg = GmmFitConfig {
            components: k,
            ..GmmFitConfig::default()
        };
        let (prior, _) = fit_prior_from_meshes(&l, &meshes, &cfg).unwrap();
        let lb = prior.nll_lower_bound();
        let mut ratios = Vec::new();
        for m in &held {
            let (h, _) = prior_nll(&prior, &apply(&l, m)).unwrap();
            let lo = [0, 1, 2].map(|d| m.iter().map(|p| p[d]).fold(f64::INFINITY, f64::min));
            let hi = [0, 1, 2].map(|d| m.iter().map(|p| p[d]).fold(f64::NEG_INFINITY, f64::max));
            let noise: Vec<[f64; 3]> = (0..m.len()).map(|_| [0, 1, 2].map(|d| rng.random_range(lo[d]..hi[d]))).collect();
            let (z, _) = prior_nll(&prior, &apply(&l, &noise)).unwrap();
            ratios.push((z - lb) / (h - lb));
        }
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.min(min);
        lines.push(format!("K={k} min ratio {min:.0}"));
    }
    outcome(worst >= 10.0, format!("20 held-out meshes vs bbox noise, LB-shifted NLL: {} (≥ 10)", lines.join(", ")))
}

fn inside(p: [f64; 2], t: &[[f64; 2]; 3]) -> bool {
    let cross = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let s = [cross(t[0], t[1]), cross(t[1], t[2]), cross(t[2], t[0])];
    s.iter().all(|&x| x >= 0.0) || s.iter().all(|&x| x <= 0.0)
}

fn criterion_5() -> Outcome {
    let h = 64;
    let cfg = SoftRenderConfig {
        height: h,
        width: h,
        sharpness: 200.0,
        ..SoftRenderConfig::default()
    };
    let tris = [
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        [[-0.6, -0.5], [0.7, -0.4], [0.1, 0.6]],
        [[-0.9, 0.8], [-0.2, 0.1], [0.5, 0.9]],
    ];
    let renderer = SoftRenderer::new(&[[0, 1, 2]], &[0], 1, cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut in_range = true;
    for tri in &tris {
        let b = renderer.render_uv(tri).unwrap();
        in_range &= b.data().iter().all(|&x: &f64| (0.0..=1.0).contains(&x));
        let soft: f64 = b.data().iter().sum();
        let hi = 4 * h;
        let hits = (0..hi * hi).filter(|i| inside(pixel_center(i / hi, i % hi, hi, hi), tri)).count();
        let hard = hits as f64 / 16.0;
        worst = worst.max((soft - hard).abs() / hard);
    }
    // Whole-body masks stay in range too.
    let t = build_template(0).unwrap();
    let sc = SampleConfig {
        height: 32,
        width: 32,
        ..SampleConfig::default()
    };
    let model = BodyModel::<f64>::from_template(&t).unwrap();
    for s in sample_dataset::<f64>(&t, 4, 5, &sc).unwrap() {
        let r = SoftRenderConfig {
            height: 32,
            width: 32,
            sharpness: 200.0,
            ..SoftRenderConfig::default()
        };
        let m = lapmesh::render::render_soft_parts(s.gt_mesh.reveal(), &model.faces, &model.part_of_face, 6, &s.camera_gt, &r)
            .unwrap();
        in_range &= m.data().iter().all(|&x| (0.0..=1.0).contains(&x));
    }
    outcome(
        worst <= 0.02 && in_range,
        format!("3 triangles at 64×64, sharpness 200: worst coverage gap {:.2}% vs 4× supersampling (≤ 2%); all pixels in [0,1]: {in_range}", 100.0 * worst),
    )
}

/// SSE of `s·R(q)·pred + t` against `gt`; quaternion normalised inside.
struct Alignment<'a> {
    pred: &'a [[f64; 3]],
    gt: &'a [[f64; 3]],
}

fn transform(p: &[f64]) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(p[0], p[1], p[2], p[3]));
    (p[7], *q.to_rotation_matrix().matrix(), Vector3::new(p[4], p[5], p[6]))
}

impl CostFunction for Alignment<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        let (s, r, t) = transform(p);
        Ok(self
            .pred
            .iter()
            .zip(self.gt)
            .map(|(a, b)| (s * r * Vector3::from(*a) + t - Vector3::from(*b)).norm_squared())
            .sum())
    }
}

fn oracle_error_mm(pred: &[[f64; 3]], gt: &[[f64; 3]], root: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let mut best = (f64::INFINITY, vec![]);
    for restart in 0..8 {
        let mut start = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        if restart > 0 {
            start[..4].iter_mut().for_each(|x| *x = rng.random::<f64>() * 2.0 - 1.0);
        }
        for _ in 0..3 {
            let simplex: Vec<Vec<f64>> = std::iter::once(start.clone())
                .chain((0..8).map(|i| {
                    let mut v = start.clone();
                    v[i] += 0.1;
                    v
                }))
                .collect();
            let solver = NelderMead::new(simplex).with_sd_tolerance(1e-15).unwrap();
            let res = Executor::new(Alignment { pred, gt }, solver)
                .configure(|s| s.max_iters(40_000))
                .run()
                .unwrap();
            start = res.state().get_best_param().unwrap().clone();
            let cost = res.state().get_best_cost();
            if cost < best.0 {
                best = (cost, start.clone());
            }
        }
    }
    let (s, r, t) = transform(&best.1);
    let aligned: Vec<[f64; 3]> = pred
        .iter()
        .map(|p| {
            let v = s * r * Vector3::from(*p) + t;
            [v.x, v.y, v.z]
        })
        .collect();
    mpve(&aligned, gt, root).unwrap()
}

fn criterion_6() -> Outcome {
    let t = build_template(0).unwrap();
    let model = BodyModel::<f64>::from_template(&t).unwrap();
    let root: Vec<f64> = model.root_weights.to_vec();
    let meshes: Vec<_> = sample_poses(&t, 6, 31).unwrap().into_iter().map(|p| p.vertices).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rigid: f64 = 0.0;
    for m in &meshes {
        let axis = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let r = UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.1..3.1));
        let s = rng.random_range(0.5..2.0);
        let tr = Vector3::new(rng.random(), rng.random(), rng.random());
        let moved: Vec<[f64; 3]> = m
            .iter()
            .map(|p| {
                let v = s * (r * Vector3::from(*p)) + tr;
                [v.x, v.y, v.z]
            })
            .collect();
        rigid = rigid.max(procrustes_error(&moved, m, &root).unwrap().error_mm);
    }
    // Random pairs: a small point subset keeps the optimizer oracle quick.
    let mut gap: f64 = 0.0;
    for pair in 0..3 {
        let pick: Vec<usize> = (0..40).map(|i| (i * 13 + pair * 7) % t.mesh.vertices.len()).collect();
        let a: Vec<[f64; 3]> = pick.iter().map(|&i| meshes[pair][i]).collect();
        let b: Vec<[f64; 3]> = pick.iter().map(|&i| meshes[pair + 3][i]).collect();
        let w = vec![1.0 / a.len() as f64; a.len()];
        let ours = procrustes_error(&a, &b, &w).unwrap().error_mm;
        gap = gap.max((ours - oracle_error_mm(&a, &b, &w, &mut rng)).abs());
    }
    outcome(
        rigid < 1e-6 && gap <= 1e-3,
        format!("similarity-transformed meshes {rigid:.1e} mm (< 1e-6); random pairs vs Nelder–Mead oracle {gap:.1e} mm (≤ 1e-3)"),
    )
}

const TRAIN_RES: usize = 32;

fn criterion_7() -> Outcome {
    let cfg = PipelineConfig::default().at_resolution(TRAIN_RES, TRAIN_RES).with_seed(0);
    let template = build_template(cfg.data.template_seed).unwrap();
    let sc = cfg.data.sample;
    let samples = sample_dataset::<f32>(&template, 8, cfg.data.seed, &sc).unwrap();
    let start = Instant::now();
    let (prior, _) = fit_template_prior(&template, &cfg.prior).unwrap();
    let model = BodyModel::<f32>::from_template(&template).unwrap();
    let tc = TrainConfig {
        steps: 2000,
        batch_size: 8,
        ..cfg.train.clone()
    };
    assert_eq!(tc.adam.lr, 3e-4);
    let out = train(&tc, &samples, None, Arc::new(prior), &model, &TrainOutput::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let reads: usize = samples.iter().map(|s| s.gt_mesh.reads()).sum();
    let report = evaluate(&out.params, &model, &samples, &tc.render).unwrap();
    outcome(
        report.mpve_mm < 170.0 && secs < 300.0 && reads == 0,
        format!(
            "8 samples, 2000 steps, lr 3e-4, batch 8, {TRAIN_RES}×{TRAIN_RES}: held-in mPVE {:.1} mm (< 170), {secs:.0} s (< 300), gt_mesh reads during training {reads}",
            report.mpve_mm
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_8() -> Outcome {
    let mut full = Vec::new();
    let mut margin_lap = Vec::new();
    let mut margin_part = Vec::new();
    let mut nolap = Vec::new();
    let mut nopart = Vec::new();
    for seed in 0..3 {
        let mut cfg = PipelineConfig::default().at_resolution(TRAIN_RES, TRAIN_RES).with_seed(seed);
        cfg.data.train_count = 64;
        cfg.data.eval_count = 16;
        cfg.train.steps = 2000;
        cfg.train.batch_size = 8;
        let template = build_template(cfg.data.template_seed).unwrap();
        let data = sample_splits(&template, &cfg).unwrap();
        let prior = Arc::new(fit_template_prior(&template, &cfg.prior).unwrap().0);
        let model = BodyModel::<f32>::from_template(&template).unwrap();
        let w = cfg.train.weights;
        let variants = [
            w,
            LossWeights { lap: 0.0, ..w },
            LossWeights { part: 0.0, ..w },
        ];
        let scores: Vec<f64> = variants
            .iter()
            .map(|&weights| {
                let tc = TrainConfig {
                    weights,
                    ..cfg.train.clone()
                };
                let out = train(&tc, &data.train, None, prior.clone(), &model, &TrainOutput::default()).unwrap();
                evaluate(&out.params, &model, &data.eval, &tc.render).unwrap().mpve_mm
            })
            .collect();
        println!("    seed {seed}: full {:.1}, no-lap {:.1}, no-part {:.1} mm", scores[0], scores[1], scores[2]);
        full.push(scores[0]);
        nolap.push(scores[1]);
        nopart.push(scores[2]);
        margin_lap.push((scores[1] - scores[0]) / scores[0]);
        margin_part.push((scores[2] - scores[0]) / scores[0]);
    }
    let (ml, mp) = (median(margin_lap), median(margin_part));
    outcome(
        ml >= 0.05 && mp >= 0.05,
        format!(
            "64/16 split, 3 seeds, medians full {:.1} / no-lap {:.1} / no-part {:.1} mm; median margins no-lap {:+.1}%, no-part {:+.1}% (each ≥ +5%)",
            median(full),
            median(nolap),
            median(nopart),
            100.0 * ml,
            100.0 * mp
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut cfg = PipelineConfig::default().at_resolution(TRAIN_RES, TRAIN_RES).with_seed(9);
    cfg.data.train_count = 12;
    cfg.data.eval_count = 4;
    cfg.train.steps = 30;
    cfg.train.batch_size = 5;
    cfg.train.checkpoint_every = 10;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&cfg, Some(a.path())).unwrap();
    // A different worker count must not change a single byte.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    pool.install(|| run_pipeline(&cfg, Some(b.path()))).unwrap();
    let files = [
        "metrics.jsonl",
        "checkpoint/weights.bin",
        "checkpoint/manifest.json",
        "checkpoints/step_000010/weights.bin",
        "checkpoints/step_000020/weights.bin",
        "prior.lmp",
        "report.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok() || !a.path().join(f).exists())
        .collect();
    outcome(
        differing.is_empty(),
        format!("two pipeline runs (1 vs 3 threads): {} artifacts compared, differing: {differing:?}", files.len()),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient gate", criterion_1),
        (2, "Laplacian identities", criterion_2),
        (3, "EM monotonicity", criterion_3),
        (4, "prior discrimination", criterion_4),
        (5, "renderer oracle", criterion_5),
        (6, "Procrustes oracle", criterion_6),
        (7, "overfit run", criterion_7),
        (8, "ablation ordering", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id} ({name}): {} [{:.1} s]", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
