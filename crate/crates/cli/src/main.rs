use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use lapmesh::body::{build_template, read_dataset, sample_dataset, sample_poses, write_dataset, TrainingSample};
use lapmesh::config::PipelineConfig;
use lapmesh::diagnostics::run_gradchecks;
use lapmesh::eval::{evaluate, score_prediction, summarize, EvalReport};
use lapmesh::mesh::{build_mesh_graph, read_obj, uniform_laplacian, write_obj};
use lapmesh::net::{forward_network, read_checkpoint, BodyModel};
use lapmesh::pipeline::{fit_template_prior, run_pipeline};
use lapmesh::prior::{fit_prior_from_meshes, read_prior, write_prior};
use lapmesh::render::pgm::write_channels;
use lapmesh::render::{render_soft_parts, CameraParams, SoftRenderConfig};
use lapmesh::train::{train, TrainOutput};
use lapmesh::{Error, Result};

#[derive(Parser)]
#[command(name = "lapmesh", version, about = "Mesh-supervision-free graph-CNN body mesh regression")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (JSON); missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds every stage (data, prior poses, EM, initialisation, shuffling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, or output file for `fit-prior`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Dotted config override, e.g. `train.lr=3e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic dataset (or, with --poses-only, bare OBJ meshes).
    GenData {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        poses_only: bool,
    },
    /// Fit the Laplacian GMM prior to a directory of meshes.
    FitPrior {
        /// OBJ files, or a dataset directory.
        #[arg(long)]
        meshes: Option<PathBuf>,
        #[arg(long)]
        components: Option<usize>,
    },
    /// Train; without --data, runs the whole pipeline from scratch.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long)]
        prior: Option<PathBuf>,
    },
    /// Score a checkpoint, or a set of predicted meshes, on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "pred_meshes", required_unless_present = "pred_meshes")]
        checkpoint: Option<PathBuf>,
        /// `sample_XXXXX.obj` files, or a dataset directory whose meshes are used.
        #[arg(long)]
        pred_meshes: Option<PathBuf>,
    },
    /// Write the predicted mesh (OBJ) and part masks (PGM) for one sample.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Finite-difference check of every differentiable primitive.
    Gradcheck,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn resolve_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg = cfg.with_seed(seed);
    }
    let cfg = cfg.with_overrides(&g.overrides)?;
    // Image resolution is owned by the data section.
    let (h, w) = (cfg.data.sample.height, cfg.data.sample.width);
    let cfg = cfg.at_resolution(h, w);
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global, fallback: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn print_json<S: serde::Serialize>(value: &S) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    let mut cfg = resolve_config(g)?;
    match &cli.command {
        Command::GenData { count, poses_only } => {
            let count = count.unwrap_or(cfg.data.train_count);
            let out = out_dir(g, "data");
            let template = build_template(cfg.data.template_seed)?;
            if *poses_only {
                std::fs::create_dir_all(&out)?;
                for (i, p) in sample_poses(&template, count, cfg.prior.pose_seed)?.iter().enumerate() {
                    write_obj(&out.join(format!("pose_{i:05}.obj")), &p.vertices, &template.mesh.faces)?;
                }
            } else {
                let d = &cfg.data;
                let samples = sample_dataset::<f32>(&template, count, d.seed, &d.sample)?;
                write_dataset(&out, &samples, d.seed, d.template_seed, &d.sample)?;
            }
            log::info!("wrote {count} samples to {}", out.display());
        }
        Command::FitPrior { meshes, components } => {
            if let Some(k) = components {
                cfg.prior.gmm.components = *k;
            }
            let out = out_dir(g, "prior.lmp");
            let template = build_template(cfg.data.template_seed)?;
            let (prior, report) = match meshes {
                Some(dir) => {
                    let graph = build_mesh_graph(&template.mesh)?;
                    let (lap, _) = uniform_laplacian(&graph, &template.mesh.vertices)?;
                    fit_prior_from_meshes(&lap, &load_meshes(dir)?, &cfg.prior.gmm)?
                }
                None => fit_template_prior(&template, &cfg.prior)?,
            };
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            write_prior(&out, &prior)?;
            let final_nll: Vec<f64> = report.nll_traces.iter().map(|t| t.last().copied().unwrap_or(f64::NAN)).collect();
            print_json(&serde_json::json!({
                "out": out,
                "components": prior.components(),
                "final_nll_per_axis": final_nll,
                "em_iterations": report.nll_traces.iter().map(Vec::len).collect::<Vec<_>>(),
                "reseeded": report.reseeded,
            }))?;
        }
        Command::Train { data, eval_data, prior } => {
            let out = out_dir(g, "run");
            match data {
                None => {
                    let outcome = run_pipeline(&cfg, Some(&out))?;
                    if let Some(r) = outcome.eval {
                        print_json(&r)?;
                    }
                }
                Some(dir) => {
                    let (manifest, samples) = read_dataset(dir)?;
                    let eval = eval_data.as_deref().map(read_dataset).transpose()?.map(|(_, s)| s);
                    let template = build_template(manifest.template_seed)?;
                    let prior = match prior {
                        Some(p) => read_prior(p)?,
                        None => fit_template_prior(&template, &cfg.prior)?.0,
                    };
                    match_resolution(&mut cfg, manifest.height, manifest.width);
                    let model = BodyModel::<f32>::from_template(&template)?;
                    let outcome = train(
                        &cfg.train,
                        &samples,
                        eval.as_deref(),
                        Arc::new(prior),
                        &model,
                        &TrainOutput { dir: Some(out.clone()) },
                    )?;
                    if let Some(last) = outcome.history.last() {
                        print_json(&last)?;
                    }
                }
            }
            log::info!("run written to {}", out.display());
        }
        Command::Eval {
            data,
            checkpoint,
            pred_meshes,
        } => {
            let (manifest, samples) = read_dataset(data)?;
            let template = build_template(manifest.template_seed)?;
            let model = BodyModel::<f32>::from_template(&template)?;
            match_resolution(&mut cfg, manifest.height, manifest.width);
            let report = match (checkpoint, pred_meshes) {
                (Some(ckpt), _) => {
                    let (params, _) = read_checkpoint(ckpt)?;
                    evaluate(&params, &model, &samples, &cfg.train.render)?
                }
                (None, Some(dir)) => eval_meshes(&model, &samples, &load_predictions(dir, samples.len())?, &cfg.train.render)?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            if let Some(out) = &g.out {
                if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)?;
        }
        Command::Reconstruct {
            data,
            checkpoint,
            index,
        } => {
            let (manifest, samples) = read_dataset(data)?;
            let sample = samples
                .get(*index)
                .ok_or_else(|| Error::Invalid(format!("sample {index} out of range (dataset has {})", samples.len())))?;
            let template = build_template(manifest.template_seed)?;
            let model = BodyModel::<f32>::from_template(&template)?;
            match_resolution(&mut cfg, manifest.height, manifest.width);
            let (params, _) = read_checkpoint(checkpoint)?;
            let output = forward_network(&params, &model, &sample.input_channels)?;
            let vertices = output.vertices();
            let camera = output.camera();
            let masks = render_soft_parts(&vertices, &model.faces, &model.part_of_face, model.num_parts, &camera, &cfg.train.render)?;
            let out = out_dir(g, "reconstruction");
            std::fs::create_dir_all(&out)?;
            let stem = format!("sample_{index:05}");
            write_obj(&out.join(format!("{stem}.obj")), &vertices, &template.mesh.faces)?;
            let masks_written = write_channels(&out, &format!("{stem}_part"), &masks)?;
            print_json(&serde_json::json!({
                "mesh": out.join(format!("{stem}.obj")),
                "masks": masks_written,
                "camera": camera.to_array(),
            }))?;
        }
        Command::Gradcheck => {
            let seed = g.seed.unwrap_or(0);
            let reports = run_gradchecks(seed)?;
            let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            print_json(&reports)?;
            if !failed.is_empty() {
                eprintln!("error: gradient check failed for {}", failed.join(", "));
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Datasets fix the image size; the network and renderer follow them.
fn match_resolution(cfg: &mut PipelineConfig, height: usize, width: usize) {
    if (cfg.train.render.height, cfg.train.render.width) != (height, width) {
        log::info!("using dataset resolution {height}x{width}");
    }
    *cfg = cfg.clone().at_resolution(height, width);
}

fn is_dataset(dir: &Path) -> bool {
    dir.join("manifest.json").is_file()
}

/// Vertex sets from `*.obj` files (sorted by name) or a dataset directory.
fn load_meshes(dir: &Path) -> Result<Vec<Vec<[f64; 3]>>> {
    if is_dataset(dir) {
        let (_, samples) = read_dataset(dir)?;
        return Ok(samples.iter().map(|s| s.gt_mesh.reveal().iter().map(|p| p.map(f64::from)).collect()).collect());
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "obj"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Invalid(format!("no .obj files in {}", dir.display())));
    }
    paths.iter().map(|p| Ok(read_obj::<f64>(p)?.0)).collect()
}

fn load_predictions(dir: &Path, count: usize) -> Result<Vec<Vec<[f32; 3]>>> {
    if is_dataset(dir) {
        let (_, samples) = read_dataset(dir)?;
        if samples.len() != count {
            return Err(Error::dim("predicted meshes", count, samples.len()));
        }
        return Ok(samples.iter().map(|s| s.gt_mesh.reveal().clone()).collect());
    }
    (0..count).map(|i| Ok(read_obj::<f32>(&dir.join(format!("sample_{i:05}.obj")))?.0)).collect()
}

/// Scores external predictions; masks are rendered under the ground-truth camera.
fn eval_meshes(
    model: &BodyModel<f32>,
    samples: &[TrainingSample<f32>],
    preds: &[Vec<[f32; 3]>],
    render: &SoftRenderConfig,
) -> Result<EvalReport> {
    let root: Vec<f64> = model.root_weights.iter().map(|&w| f64::from(w)).collect();
    let rows = samples
        .iter()
        .zip(preds)
        .map(|(s, v)| {
            let cam: CameraParams<f32> = s.camera_gt;
            let masks = render_soft_parts(v, &model.faces, &model.part_of_face, model.num_parts, &cam, render)?;
            score_prediction(v, &masks, s, &root)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(&rows)
}
